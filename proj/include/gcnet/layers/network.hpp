// The joint detection/tracking network.
//
// Detection: image -> backbone feature F (stride 8) -> class confidence Y_d,
// Q/K/V maps, global correlation of Q against same-frame K, and an absolute
// box regression head. Tracking reuses the correlation weights, head
// normalization and box regressor with queries from an earlier frame; only the
// tracking-confidence layers are its own.
#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gcnet/geometry.hpp"
#include "gcnet/layers/blocks.hpp"

namespace gcnet {

/// Query handed from one frame to the next for a track or candidate.
template <class T>
struct track_query {
  std::vector<T> q;  // row of a Q or K map
  std::vector<T> v;  // matching row of V
};

template <class T>
class gcnet_model {
 public:
  using tensor_type = basic_tensor<T>;

  struct qkv_maps {
    tensor_type q, k, v;  // [n, h', w', c]
  };

  struct detection_output {
    tensor_type feature;     // F       [n, h', w', c]
    tensor_type confidence;  // Y_d     [n, h', w', classes]
    tensor_type q, k, v;     //         [n, h', w', c]
    tensor_type boxes;       // B_d     [n, h'*w', 4] feature-map units; undefined when sparse
  };

  struct head_output {
    tensor_type boxes;       // [..., 4] as (cx, cy, h, w) in feature-map units
    tensor_type confidence;  // [..., 1] tracking confidence, undefined for detection
  };

  explicit gcnet_model(network_config cfg, std::uint64_t seed = 1) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t c = cfg_.channels;
    stem_ = make_conv_bn(3, 3, c / 4, 2, rng);
    down2_ = make_conv_bn(3, c / 4, c / 2, 2, rng);
    refine2_ = make_conv_bn(3, c / 2, c / 2, 1, rng);
    down3_ = make_conv_bn(3, c / 2, c, 2, rng);
    refine3_ = make_conv_bn(3, c, c, 1, rng);
    context_ = make_conv_bn(3, c, c, 2, rng);
    merge_ = make_conv_bn(3, c, c, 1, rng);

    cls_conv_ = he_normal({3, 3, c, c / 2}, 9 * c, rng);
    cls_conv_bias_ = tensor_type({c / 2});
    cls_out_ = scaled_normal({cfg_.classes, c / 2}, 0.01, rng);
    // Prior of 0.1 object probability per cell.
    cls_out_bias_ = tensor_type({cfg_.classes}, T(-2.19));

    q_proj_ = scaled_normal({c, c}, std::sqrt(1.0 / double(c)), rng);
    k_proj_ = scaled_normal({c, c}, std::sqrt(1.0 / double(c)), rng);
    v_proj_ = scaled_normal({c, c}, std::sqrt(1.0 / double(c)), rng);
    v_bias_ = tensor_type({c});
    q_norm_ = make_norm(c);
    k_norm_ = make_norm(c);

    const std::size_t hw = cfg_.positions();
    corr_weight_ = scaled_normal({cfg_.corr_channels, hw}, std::sqrt(2.0 / double(hw + cfg_.corr_channels)), rng);
    head_norm_ = make_norm(cfg_.head_width());
    box_weight_ = scaled_normal({4, cfg_.head_width()}, 0.1 * std::sqrt(1.0 / double(cfg_.head_width())), rng);
    box_bias_ = tensor_type({4});
    conf_hidden_ = he_normal({cfg_.confidence_hidden, cfg_.head_width()}, cfg_.head_width(), rng);
    conf_hidden_bias_ = tensor_type({cfg_.confidence_hidden});
    conf_out_ = scaled_normal({1, cfg_.confidence_hidden}, std::sqrt(1.0 / double(cfg_.confidence_hidden)), rng);
    conf_out_bias_ = tensor_type({1});

    position_ = position_embedding<T>(cfg_.feature_h(), cfg_.feature_w(), c, cfg_.position_embedding);
    for (auto& [name, p] : parameters()) p.get().set_requires_grad(true);
  }

  const network_config& config() const { return cfg_; }
  const tensor_type& position() const { return position_; }
  tensor_type& position() { return position_; }

  // -------------------------------------------------------------------------
  // Detection path

  tensor_type backbone(const tensor_type& images, norm_mode mode) {
    check_images(images);
    auto s1 = apply(stem_, images, mode);
    auto s2 = apply(refine2_, apply(down2_, s1, mode), mode);
    auto s3 = apply(refine3_, apply(down3_, s2, mode), mode);
    auto ctx = apply(context_, s3, mode);
    auto merged = add(s3, upsample2x(ctx, s3.dim(1), s3.dim(2)));
    return apply(merge_, merged, mode);
  }

  /// Y_d in (0, 1): [n, h', w', classes].
  tensor_type classify(const tensor_type& feature) const {
    auto hidden = relu(add(conv2d(feature, cls_conv_, 1), cls_conv_bias_));
    return sigmoid(linear(hidden, cls_out_, cls_out_bias_));
  }

  qkv_maps compute_qkv(const tensor_type& feature, const tensor_type& confidence, norm_mode mode) {
    qkv_maps m;
    m.q = norm(q_norm_, add(linear(feature, q_proj_), position_), mode);
    auto k = norm(k_norm_, add(linear(feature, k_proj_), position_), mode);
    m.k = cfg_.use_gate ? gate(k, gate_attention(confidence)) : k;
    m.v = linear(feature, v_proj_, v_bias_);
    return m;
  }

  /// Shared regression head over correlation vectors (and values when
  /// enabled): boxes, plus tracking confidence when requested.
  head_output regression_head(const tensor_type& corr, const tensor_type& values, norm_mode mode,
                              bool with_confidence) {
    tensor_type input = cfg_.use_value_concat ? concat_last<T>({corr, values}) : corr;
    auto normalized = norm(head_norm_, input, mode);
    head_output out;
    out.boxes = box_transform(linear(normalized, box_weight_, box_bias_));
    if (with_confidence) {
      auto hidden = relu(linear(normalized, conf_hidden_, conf_hidden_bias_));
      out.confidence = sigmoid(linear(hidden, conf_out_, conf_out_bias_));
    }
    return out;
  }

  /// Full detection forward. Dense boxes are computed unless `dense_boxes`
  /// is false (inference computes them at peaks through boxes_at()).
  detection_output detect(const tensor_type& images, norm_mode mode, bool dense_boxes = true) {
    detection_output out;
    out.feature = backbone(images, mode);
    out.confidence = classify(out.feature);
    auto maps = compute_qkv(out.feature, out.confidence, mode);
    out.q = maps.q;
    out.k = maps.k;
    out.v = maps.v;
    if (dense_boxes) {
      auto corr = global_correlation(out.q, out.k, corr_weight_);
      out.boxes = regression_head(corr, flat_positions(out.v), mode, false).boxes;
    }
    return out;
  }

  /// Boxes at chosen flat positions of image `b`, using running statistics.
  tensor_type boxes_at(const detection_output& out, std::size_t b, const std::vector<std::size_t>& positions) {
    if (positions.empty()) return tensor_type(shape_t{0, 4});
    auto queries = gather_rows(image_rows(out.q, b), positions);
    auto values = gather_rows(image_rows(out.v, b), positions);
    auto corr = sparse_correlation(queries, normalized_keys(out, b), corr_weight_);
    return regression_head(corr, values, norm_mode::eval, false).boxes;
  }

  /// l2-normalized K rows of image `b`: [h'*w', c]. Computed once per frame
  /// and shared by every tracking query.
  tensor_type normalized_keys(const detection_output& out, std::size_t b) const {
    return l2_normalize(image_rows(out.k, b));
  }

  // -------------------------------------------------------------------------
  // Tracking path

  /// Dense tracking used in training: every position of an earlier frame's
  /// query/value maps against the current frame's K. The head normalization
  /// uses running statistics, as at inference.
  head_output track_dense(const tensor_type& query_map, const tensor_type& value_map, const tensor_type& key_map) {
    auto corr = global_correlation(query_map, key_map, corr_weight_);
    return regression_head(corr, flat_positions(value_map), norm_mode::eval, true);
  }

  /// Sparse tracking at inference: one (confidence, box) per query, order
  /// preserved. Cost is linear in the number of queries.
  head_output track(std::span<const track_query<T>> queries, const tensor_type& normalized_keys) {
    const std::size_t c = cfg_.channels;
    if (queries.empty()) return {tensor_type(shape_t{0, 4}), tensor_type(shape_t{0, 1})};
    std::vector<T> qs, vs;
    qs.reserve(queries.size() * c);
    vs.reserve(queries.size() * c);
    for (const auto& tq : queries) {
      if (tq.q.size() != c || tq.v.size() != c) throw shape_error("track: query/value width must equal channels");
      qs.insert(qs.end(), tq.q.begin(), tq.q.end());
      vs.insert(vs.end(), tq.v.begin(), tq.v.end());
    }
    tensor_type qt(shape_t{queries.size(), c}, std::move(qs));
    tensor_type vt(shape_t{queries.size(), c}, std::move(vs));
    auto corr = sparse_correlation(qt, normalized_keys, corr_weight_);
    return regression_head(corr, vt, norm_mode::eval, true);
  }

  /// Q or K row and V row of image `b` at (row, col).
  track_query<T> query_at(const tensor_type& query_map, const tensor_type& value_map, std::size_t b, std::size_t row,
                          std::size_t col) const {
    const std::size_t c = cfg_.channels, w = cfg_.feature_w(), hw = cfg_.positions();
    const std::size_t offset = (b * hw + row * w + col) * c;
    track_query<T> tq;
    tq.q.assign(query_map.values().begin() + offset, query_map.values().begin() + offset + c);
    tq.v.assign(value_map.values().begin() + offset, value_map.values().begin() + offset + c);
    return tq;
  }

  // -------------------------------------------------------------------------
  // Parameters

  using parameter_list = std::vector<std::pair<std::string, std::reference_wrapper<tensor_type>>>;
  using buffer_list = std::vector<std::pair<std::string, std::reference_wrapper<std::vector<T>>>>;

  parameter_list parameters() {
    parameter_list out;
    auto block = [&out](const std::string& name, conv_bn& b) {
      out.emplace_back(name + ".kernel", b.kernel);
      out.emplace_back(name + ".gamma", b.gamma);
      out.emplace_back(name + ".beta", b.beta);
    };
    block("backbone.stem", stem_);
    block("backbone.down2", down2_);
    block("backbone.refine2", refine2_);
    block("backbone.down3", down3_);
    block("backbone.refine3", refine3_);
    block("backbone.context", context_);
    block("backbone.merge", merge_);
    out.emplace_back("cls.conv", cls_conv_);
    out.emplace_back("cls.conv_bias", cls_conv_bias_);
    out.emplace_back("cls.out", cls_out_);
    out.emplace_back("cls.out_bias", cls_out_bias_);
    out.emplace_back("qkv.q_proj", q_proj_);
    out.emplace_back("qkv.k_proj", k_proj_);
    out.emplace_back("qkv.v_proj", v_proj_);
    out.emplace_back("qkv.v_bias", v_bias_);
    out.emplace_back("qkv.q_norm.gamma", q_norm_.gamma);
    out.emplace_back("qkv.q_norm.beta", q_norm_.beta);
    out.emplace_back("qkv.k_norm.gamma", k_norm_.gamma);
    out.emplace_back("qkv.k_norm.beta", k_norm_.beta);
    out.emplace_back("corr.weight", corr_weight_);
    out.emplace_back("head.norm.gamma", head_norm_.gamma);
    out.emplace_back("head.norm.beta", head_norm_.beta);
    out.emplace_back("head.box.weight", box_weight_);
    out.emplace_back("head.box.bias", box_bias_);
    for (auto& p : tracking_confidence_parameters()) out.push_back(p);
    return out;
  }

  /// Layers used only by the tracking path.
  parameter_list tracking_confidence_parameters() {
    return {{"track.conf.hidden", conf_hidden_},
            {"track.conf.hidden_bias", conf_hidden_bias_},
            {"track.conf.out", conf_out_},
            {"track.conf.out_bias", conf_out_bias_}};
  }

  buffer_list buffers() {
    buffer_list out;
    auto stats = [&out](const std::string& name, batch_norm_state<T>& s) {
      out.emplace_back(name + ".running_mean", s.mean);
      out.emplace_back(name + ".running_var", s.var);
    };
    stats("backbone.stem", stem_.stats);
    stats("backbone.down2", down2_.stats);
    stats("backbone.refine2", refine2_.stats);
    stats("backbone.down3", down3_.stats);
    stats("backbone.refine3", refine3_.stats);
    stats("backbone.context", context_.stats);
    stats("backbone.merge", merge_.stats);
    stats("qkv.q_norm", q_norm_.stats);
    stats("qkv.k_norm", k_norm_.stats);
    stats("head.norm", head_norm_.stats);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, p] : parameters()) n += p.get().size();
    return n;
  }

  tensor_type& corr_weight() { return corr_weight_; }
  tensor_type& box_weight() { return box_weight_; }

  static constexpr T bn_momentum = T(0.9);
  static constexpr T bn_eps = T(1e-5);

 private:
  struct conv_bn {
    tensor_type kernel, gamma, beta;
    batch_norm_state<T> stats;
    std::size_t stride = 1;
  };
  struct norm_layer {
    tensor_type gamma, beta;
    batch_norm_state<T> stats;
  };

  static tensor_type scaled_normal(shape_t shape, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, stddev);
    std::vector<T> v(element_count(shape));
    for (auto& x : v) x = static_cast<T>(d(rng));
    return tensor_type(std::move(shape), std::move(v));
  }
  static tensor_type he_normal(shape_t shape, std::size_t fan_in, std::mt19937_64& rng) {
    return scaled_normal(std::move(shape), std::sqrt(2.0 / double(fan_in)), rng);
  }
  static conv_bn make_conv_bn(std::size_t k, std::size_t cin, std::size_t cout, std::size_t stride,
                              std::mt19937_64& rng) {
    conv_bn b;
    b.kernel = he_normal({k, k, cin, cout}, k * k * cin, rng);
    b.gamma = tensor_type({cout}, T(1));
    b.beta = tensor_type({cout});
    b.stats = batch_norm_state<T>(cout);
    b.stride = stride;
    return b;
  }
  static norm_layer make_norm(std::size_t c) {
    return {tensor_type({c}, T(1)), tensor_type({c}), batch_norm_state<T>(c)};
  }

  tensor_type apply(conv_bn& b, const tensor_type& x, norm_mode mode) {
    return relu(batch_norm(conv2d(x, b.kernel, b.stride), b.gamma, b.beta, b.stats, mode, bn_momentum, bn_eps));
  }
  tensor_type norm(norm_layer& n, const tensor_type& x, norm_mode mode) {
    return batch_norm(x, n.gamma, n.beta, n.stats, mode, bn_momentum, bn_eps);
  }

  // Raw head outputs to boxes in feature-map units: centers are an affine
  // map of the raw value around the grid middle, sizes go through softplus.
  tensor_type box_transform(const tensor_type& raw) const {
    const T half_w = T(cfg_.feature_w()) / 2, half_h = T(cfg_.feature_h()) / 2;
    const T size_h = T(cfg_.feature_h()) / 4, size_w = T(cfg_.feature_w()) / 4;
    auto cx = add_scalar(scale(slice_last(raw, 0, 1), half_w), half_w);
    auto cy = add_scalar(scale(slice_last(raw, 1, 1), half_h), half_h);
    auto h = scale(softplus(slice_last(raw, 2, 1)), size_h);
    auto w = scale(softplus(slice_last(raw, 3, 1)), size_w);
    return concat_last<T>({cx, cy, h, w});
  }

  void check_images(const tensor_type& images) const {
    if (images.rank() != 4 || images.dim(3) != 3)
      throw shape_error("detect: images must be [n, h, w, 3], got " + shape_string(images.shape()));
    if (images.dim(1) % network_config::stride || images.dim(2) % network_config::stride)
      throw config_error("detect: image size " + std::to_string(images.dim(1)) + "x" + std::to_string(images.dim(2)) +
                         " is not divisible by 8");
    if (images.dim(1) != cfg_.input_h || images.dim(2) != cfg_.input_w)
      throw config_error("detect: image size " + std::to_string(images.dim(1)) + "x" + std::to_string(images.dim(2)) +
                         " does not match the configured " + std::to_string(cfg_.input_h) + "x" +
                         std::to_string(cfg_.input_w));
  }

  tensor_type flat_positions(const tensor_type& map) const {
    return reshape(map, shape_t{map.dim(0), map.dim(1) * map.dim(2), map.dim(3)});
  }
  tensor_type image_rows(const tensor_type& map, std::size_t b) const {
    return reshape(slice_first(map, b, 1), shape_t{map.dim(1) * map.dim(2), map.dim(3)});
  }

  network_config cfg_;
  conv_bn stem_, down2_, refine2_, down3_, refine3_, context_, merge_;
  tensor_type cls_conv_, cls_conv_bias_, cls_out_, cls_out_bias_;
  tensor_type q_proj_, k_proj_, v_proj_, v_bias_;
  norm_layer q_norm_, k_norm_;
  tensor_type corr_weight_;
  norm_layer head_norm_;
  tensor_type box_weight_, box_bias_;
  tensor_type conf_hidden_, conf_hidden_bias_, conf_out_, conf_out_bias_;
  tensor_type position_;
};

}  // namespace gcnet

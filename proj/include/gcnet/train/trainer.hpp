// Two-stage training: detection pretraining, then joint fine-tuning of
// detection and tracking on frame pairs (I_{t-i}, I_t).
#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gcnet/synthdata/augment.hpp"
#include "gcnet/synthdata/dataset.hpp"
#include "gcnet/targets/losses.hpp"
#include "gcnet/train/adam.hpp"
#include "gcnet/train/model_io.hpp"

namespace gcnet {

enum class train_stage { detect_pretrain, joint_finetune };

inline std::string to_string(train_stage s) { return s == train_stage::detect_pretrain ? "detect-pretrain" : "joint-finetune"; }

inline train_stage parse_train_stage(const std::string& s) {
  if (s == "detect-pretrain") return train_stage::detect_pretrain;
  if (s == "joint-finetune") return train_stage::joint_finetune;
  throw config_error("unknown stage '" + s + "' (expected detect-pretrain|joint-finetune)");
}

struct train_config {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t pretrain_steps = 2000;
  std::size_t finetune_steps = 2000;
  std::size_t max_gap = 5;
  double grad_clip = 10.0;  // global gradient norm, 0 disables
  std::size_t checkpoint_every = 500;
  std::uint64_t seed = 1;
  augment_options augmentation;

  std::size_t steps(train_stage s) const { return s == train_stage::detect_pretrain ? pretrain_steps : finetune_steps; }

  void validate() const {
    if (!(learning_rate > 0 && std::isfinite(learning_rate))) throw config_error("train: learning_rate must be positive");
    if (batch_size == 0) throw config_error("train: batch_size must be positive");
    if (max_gap == 0) throw config_error("train: max_gap must be at least 1");
    if (grad_clip < 0) throw config_error("train: grad_clip must be non-negative");
    const auto& a = augmentation;
    if (!(a.min_brightness > 0 && a.min_brightness <= a.max_brightness))
      throw config_error("train: brightness range must satisfy 0 < min <= max");
    if (!(a.min_scale > 0 && a.min_scale <= a.max_scale)) throw config_error("train: scale range must satisfy 0 < min <= max");
  }

  std::map<std::string, std::string> to_kv() const {
    auto d = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    return {{"learning_rate", d(learning_rate)},
            {"batch_size", std::to_string(batch_size)},
            {"pretrain_steps", std::to_string(pretrain_steps)},
            {"finetune_steps", std::to_string(finetune_steps)},
            {"max_gap", std::to_string(max_gap)},
            {"grad_clip", d(grad_clip)},
            {"checkpoint_every", std::to_string(checkpoint_every)},
            {"seed", std::to_string(seed)},
            {"flip_probability", d(augmentation.flip_probability)},
            {"min_brightness", d(augmentation.min_brightness)},
            {"max_brightness", d(augmentation.max_brightness)},
            {"min_scale", d(augmentation.min_scale)},
            {"max_scale", d(augmentation.max_scale)},
            {"scale_probability", d(augmentation.scale_probability)}};
  }

  static train_config from_kv(const std::map<std::string, std::string>& kv) {
    train_config c;
    auto get = [&](const char* k, auto& dst) {
      auto it = kv.find(k);
      if (it == kv.end()) return;
      try {
        std::size_t used = 0;
        if constexpr (std::is_floating_point_v<std::remove_reference_t<decltype(dst)>>)
          dst = std::stod(it->second, &used);
        else
          dst = static_cast<std::remove_reference_t<decltype(dst)>>(std::stoull(it->second, &used));
        if (used != it->second.size()) throw std::invalid_argument(k);
      } catch (const std::logic_error&) {
        throw config_error(std::string("train: malformed value for ") + k + ": '" + it->second + "'");
      }
    };
    get("learning_rate", c.learning_rate);
    get("batch_size", c.batch_size);
    get("pretrain_steps", c.pretrain_steps);
    get("finetune_steps", c.finetune_steps);
    get("max_gap", c.max_gap);
    get("grad_clip", c.grad_clip);
    get("checkpoint_every", c.checkpoint_every);
    get("seed", c.seed);
    get("flip_probability", c.augmentation.flip_probability);
    get("min_brightness", c.augmentation.min_brightness);
    get("max_brightness", c.augmentation.max_brightness);
    get("min_scale", c.augmentation.min_scale);
    get("max_scale", c.augmentation.max_scale);
    get("scale_probability", c.augmentation.scale_probability);
    c.validate();
    return c;
  }
};

/// Thrown when a loss term becomes non-finite; names the step and batch.
class training_diverged : public numeric_error {
 public:
  using numeric_error::numeric_error;
};

template <class T>
class trainer {
 public:
  using model_type = gcnet_model<T>;

  trainer(model_type& model, train_config cfg, train_stage stage, const std::vector<sequence>& data)
      : model_(model), cfg_(std::move(cfg)), stage_(stage), data_(data), params_(model.parameters()),
        opt_(cfg_.learning_rate) {
    cfg_.validate();
    if (data_.empty()) throw config_error("train: no training sequences");
    for (const auto& s : data_)
      if (s.frames.size() < 2) throw config_error("train: every sequence needs at least two frames");
  }

  train_stage stage() const { return stage_; }
  std::size_t step() const { return step_; }
  bool done() const { return step_ >= cfg_.steps(stage_); }
  const adam<T>& optimizer() const { return opt_; }

  /// The batch drawn at a given step depends only on (seed, stage, step), so
  /// a resumed run sees the same data as an uninterrupted one.
  std::vector<train_sample> batch(std::size_t step) const {
    std::seed_seq seq{std::uint32_t(cfg_.seed), std::uint32_t(cfg_.seed >> 32), std::uint32_t(stage_),
                      std::uint32_t(step), std::uint32_t(step >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
    const auto& net = model_.config();
    std::vector<train_sample> out;
    for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
      auto s = sample_pair(data_[pick(rng)], rng, cfg_.max_gap);
      out.push_back(fit_canvas(augment(s, rng, cfg_.augmentation), net.input_h, net.input_w, rng));
    }
    return out;
  }

  /// One optimizer step. Throws training_diverged on a non-finite loss
  /// before any parameter is updated.
  loss_breakdown train_step() {
    const auto samples = batch(step_);
    const auto& net = model_.config();
    const std::size_t n = samples.size(), fh = net.feature_h(), fw = net.feature_w();
    const double to_feature = 1.0 / double(network_config::stride);

    std::vector<const rgb_image*> images;
    std::vector<target_maps> det_targets;
    const bool joint = stage_ == train_stage::joint_finetune;
    if (joint)
      for (const auto& s : samples) {
        images.push_back(&s.previous);
        det_targets.push_back(gaussian_heatmap(s.gt_previous.scaled(to_feature), fh, fw, net.classes));
      }
    for (const auto& s : samples) {
      images.push_back(&s.current);
      det_targets.push_back(gaussian_heatmap(s.gt_current.scaled(to_feature), fh, fw, net.classes));
    }

    auto out = model_.detect(to_tensor<T>(images), norm_mode::train, true);
    auto det = detection_loss(out.confidence, out.boxes, det_targets);
    loss_pair<T> trk;
    if (joint) {
      std::seed_seq seq{std::uint32_t(cfg_.seed), 7u, std::uint32_t(step_), std::uint32_t(step_ >> 32)};
      std::mt19937_64 coin(seq);
      const bool use_k = std::bernoulli_distribution(0.5)(coin);
      auto queries = slice_first(use_k ? out.k : out.q, 0, n);
      auto values = slice_first(out.v, 0, n);
      auto keys = slice_first(out.k, n, n);
      auto head = model_.track_dense(queries, values, keys);
      std::vector<tracking_targets> trk_targets;
      for (std::size_t b = 0; b < n; ++b)
        trk_targets.push_back(make_tracking_targets(det_targets[b], samples[b].gt_current.scaled(to_feature)));
      trk = tracking_loss(head.confidence, head.boxes, trk_targets);
    }

    loss_breakdown parts;
    basic_tensor<T> total;
    try {
      total = total_loss(det, trk, parts);
    } catch (const numeric_error& e) {
      throw training_diverged(to_string(stage_) + " batch " + std::to_string(step_) + ": " + e.what());
    }
    backward(total);
    clip_gradients();
    opt_.step(params_);
    ++step_;
    return parts;
  }

  void store(checkpoint& ck) const {
    store_model(model_, ck);
    ck.set_meta("stage", to_string(stage_));
    ck.set_meta("step", std::to_string(step_));
    for (const auto& [k, v] : cfg_.to_kv()) ck.set_meta("train." + k, v);
    opt_.store(params_, ck);
  }

  /// Resumes weights, optimizer state and step counter from a checkpoint of
  /// the same stage.
  void resume(const checkpoint& ck) {
    if (parse_train_stage(ck.meta("stage")) != stage_)
      throw config_error("train: checkpoint is from stage " + ck.meta("stage") + ", not " + to_string(stage_));
    restore_model(model_, ck);
    opt_.restore(params_, ck);
    step_ = std::stoul(ck.meta("step"));
  }

 private:
  void clip_gradients() {
    if (cfg_.grad_clip <= 0) return;
    double sq = 0;
    for (auto& [name, p] : params_)
      if (p.get().has_grad())
        for (T g : p.get().grad()) sq += double(g) * double(g);
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm))
      throw training_diverged(to_string(stage_) + " batch " + std::to_string(step_) + ": non-finite gradient");
    if (norm <= cfg_.grad_clip) return;
    const T f = T(cfg_.grad_clip / norm);
    for (auto& [name, p] : params_)
      if (p.get().has_grad())
        for (T& g : p.get().mutable_grad()) g *= f;
  }

  model_type& model_;
  train_config cfg_;
  train_stage stage_;
  const std::vector<sequence>& data_;
  typename model_type::parameter_list params_;
  adam<T> opt_;
  std::size_t step_ = 0;
};

}  // namespace gcnet

// Binds the network to the tracking state machine: sparse detection at
// confidence peaks, sparse tracking of stored queries, query refresh from K/V.
#pragma once

#include <algorithm>
#include <cmath>

#include "gcnet/layers/network.hpp"
#include "gcnet/pipeline/peaks.hpp"
#include "gcnet/pipeline/tracker.hpp"

namespace gcnet {

template <class T>
class network_tracker {
 public:
  using model_type = gcnet_model<T>;
  using query_type = track_query<T>;

  struct analysis_type {
    typename model_type::detection_output out;
    basic_tensor<T> keys;  // normalized K rows [h'*w', c]
    std::vector<detection<query_type>> detections;
  };

  network_tracker(model_type& model, double peak_threshold) : model_(model), threshold_(peak_threshold) {}

  /// image: [h, w, 3] or [1, h, w, 3].
  analysis_type analyze(const basic_tensor<T>& image) {
    no_grad_guard ng;
    const auto batch = image.rank() == 3 ? reshape(image, shape_t{1, image.dim(0), image.dim(1), image.dim(2)}) : image;
    if (batch.dim(0) != 1) throw shape_error("network_tracker: expected a single frame");
    analysis_type a;
    a.out = model_.detect(batch, norm_mode::eval, false);
    a.keys = model_.normalized_keys(a.out, 0);
    const auto peaks = extract_peaks(a.out.confidence, threshold_);
    std::vector<std::size_t> positions;
    const std::size_t w = model_.config().feature_w();
    for (const auto& p : peaks) positions.push_back(p.row * w + p.col);
    const auto boxes = model_.boxes_at(a.out, 0, positions);
    for (std::size_t i = 0; i < peaks.size(); ++i) {
      detection<query_type> d;
      d.box = box_row(boxes, i);
      d.score = peaks[i].score;
      d.cls = int(peaks[i].cls);
      d.query = model_.query_at(a.out.q, a.out.v, 0, peaks[i].row, peaks[i].col);
      a.detections.push_back(std::move(d));
    }
    return a;
  }

  const std::vector<detection<query_type>>& detections(const analysis_type& a) const { return a.detections; }

  std::vector<tracked_box> track(const analysis_type& a, std::span<const query_type> queries) {
    no_grad_guard ng;
    auto head = model_.track(queries, a.keys);
    std::vector<tracked_box> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) out[i] = {box_row(head.boxes, i), double(head.confidence[i])};
    return out;
  }

  /// K and V rows at the cell under the box center.
  query_type refresh(const analysis_type& a, const bounding_box& box) const {
    const auto& cfg = model_.config();
    auto cell = [](double v, std::size_t n) {
      const double f = std::floor(v / double(network_config::stride));
      return static_cast<std::size_t>(std::clamp(f, 0.0, double(n - 1)));
    };
    return model_.query_at(a.out.k, a.out.v, 0, cell(box.cy, cfg.feature_h()), cell(box.cx, cfg.feature_w()));
  }

 private:
  static bounding_box box_row(const basic_tensor<T>& boxes, std::size_t i) {
    const double s = network_config::stride;
    return {boxes[i * 4] * s, boxes[i * 4 + 1] * s, boxes[i * 4 + 2] * s, boxes[i * 4 + 3] * s};
  }

  model_type& model_;
  double threshold_;
};

}  // namespace gcnet

// Running a model over held-out clips and scoring it.
#pragma once

#include <vector>

#include "gcnet/metrics/clear_mot.hpp"
#include "gcnet/metrics/detection_ap.hpp"
#include "gcnet/pipeline/network_tracker.hpp"
#include "gcnet/synthdata/scene.hpp"

namespace gcnet {

/// Peaks of every frame as scored boxes in pixels.
template <class T>
detection_set detect_sequence(gcnet_model<T>& model, const sequence& seq, double peak_threshold) {
  network_tracker<T> net(model, peak_threshold);
  detection_set out;
  for (const auto& f : seq.frames) {
    auto a = net.analyze(to_tensor<T>(f));
    std::vector<scored_box> boxes;
    for (const auto& d : a.detections) boxes.push_back({d.box, d.score, d.cls});
    out.push_back(std::move(boxes));
  }
  return out;
}

template <class T>
ap_result evaluate_detection(gcnet_model<T>& model, const std::vector<sequence>& clips, double peak_threshold = 0.05,
                             double iou_thr = 0.5) {
  detection_set preds;
  std::vector<ground_truth_frame> gt;
  for (const auto& s : clips) {
    auto d = detect_sequence(model, s, peak_threshold);
    preds.insert(preds.end(), d.begin(), d.end());
    gt.insert(gt.end(), s.gt.begin(), s.gt.end());
  }
  return detection_ap(preds, gt, iou_thr);
}

template <class T>
video_tracks track_sequence(gcnet_model<T>& model, const sequence& seq, const pipeline_config& cfg) {
  network_tracker<T> net(model, cfg.p2);
  std::vector<basic_tensor<T>> frames;
  for (const auto& f : seq.frames) frames.push_back(to_tensor<T>(f));
  return track_video(net, frames, cfg);
}

/// Reported boxes per frame; candidates are not reported unless asked.
inline track_set reported_tracks(const video_tracks& v, bool include_candidates = false) {
  track_set out(v.frames.size());
  for (std::size_t t = 0; t < v.frames.size(); ++t)
    for (const auto& r : v.frames[t].records)
      if (r.status == track_status::track || include_candidates) out[t].objects.push_back({r.id, 0, r.box});
  return out;
}

struct tracking_evaluation {
  mot_counts counts;
  std::vector<video_tracks> tracks;  // per clip
};

template <class T>
tracking_evaluation evaluate_tracking(gcnet_model<T>& model, const std::vector<sequence>& clips,
                                      const pipeline_config& cfg = {}, double iou_thr = 0.5) {
  tracking_evaluation out;
  for (const auto& s : clips) {
    out.tracks.push_back(track_sequence(model, s, cfg));
    out.counts += clear_mot(reported_tracks(out.tracks.back()), s.gt, iou_thr);
  }
  return out;
}

}  // namespace gcnet

// Online joint detection and tracking state machine.
//
// Every frame: detect, track every live track and candidate with its stored
// query, update confidences with Y = min(2 Y Y_t, 1.5), drop the weak ones,
// refresh the survivors' queries at their new box centers, then start tracks
// or candidates from detections that no live box already explains.
//
// The model is any type providing
//   analysis_type analyze(const Frame&)
//   const std::vector<detection<query_type>>& detections(const analysis_type&)
//   std::vector<tracked_box> track(const analysis_type&, std::span<const query_type>)
//   query_type refresh(const analysis_type&, const bounding_box&)
// so the lifecycle can be driven by scripted outputs.
#pragma once

#include <algorithm>
#include <concepts>
#include <numeric>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

#include "gcnet/geometry.hpp"
#include "gcnet/layers/config.hpp"

namespace gcnet {

enum class track_status { track, candidate, deleted };

inline std::string to_string(track_status s) {
  switch (s) {
    case track_status::track: return "track";
    case track_status::candidate: return "candidate";
    case track_status::deleted: return "deleted";
  }
  return "?";
}

inline track_status parse_track_status(const std::string& s) {
  if (s == "track") return track_status::track;
  if (s == "candidate") return track_status::candidate;
  if (s == "deleted") return track_status::deleted;
  throw std::invalid_argument("unknown track status '" + s + "'");
}

template <class Query>
struct detection {
  bounding_box box;  // pixels
  double score = 0.0;
  int cls = 0;
  Query query;
};

struct tracked_box {
  bounding_box box;  // pixels
  double confidence = 0.0;
};

template <class M, class Frame>
concept tracking_model = requires(M& m, const Frame& f, const typename M::analysis_type& a,
                                  std::span<const typename M::query_type> qs, const bounding_box& b) {
  { m.analyze(f) } -> std::convertible_to<typename M::analysis_type>;
  { m.detections(a) } -> std::convertible_to<const std::vector<detection<typename M::query_type>>&>;
  { m.track(a, qs) } -> std::convertible_to<std::vector<tracked_box>>;
  { m.refresh(a, b) } -> std::convertible_to<typename M::query_type>;
};

enum class candidate_rule {
  prose,    // candidates are deleted below p2 and promoted at p1
  listing,  // candidates are deleted below p1; survivors are promoted
};

struct pipeline_config {
  double p1 = 0.5;  // new-track / promotion threshold
  double p2 = 0.3;  // deletion and detection threshold
  double p3 = 0.5;  // IoU above which a detection is a duplicate
  double confidence_cap = 1.5;
  std::size_t max_tracks = 256;  // live tracks plus candidates
  candidate_rule candidates = candidate_rule::prose;

  void validate() const {
    auto unit = [](double v) { return v > 0 && v < 1; };
    if (!unit(p1) || !unit(p2) || !unit(p3)) throw config_error("pipeline: p1, p2, p3 must lie in (0, 1)");
    if (!(p2 < p1)) throw config_error("pipeline: p2 must be below p1");
    if (max_tracks == 0) throw config_error("pipeline: max_tracks must be positive");
  }
};

struct trajectory_point {
  std::size_t frame = 0;
  bounding_box box;
  double confidence = 0.0;
  track_status status = track_status::track;
};

struct trajectory {
  int id = 0;
  int cls = 0;
  track_status final_status = track_status::track;
  std::vector<trajectory_point> points;
};

struct frame_record {
  int id = 0;
  bounding_box box;
  double confidence = 0.0;
  track_status status = track_status::track;
};

struct frame_result {
  std::size_t frame = 0;
  std::vector<frame_record> records;  // ordered by id
};

template <class Query>
struct track_state {
  trajectory history;
  double confidence = 0.0;
  Query query;
  track_status status() const { return history.final_status; }
  const bounding_box& box() const { return history.points.back().box; }
};

template <class Model>
class online_tracker {
 public:
  using query_type = typename Model::query_type;
  using state_type = track_state<query_type>;

  online_tracker(Model& model, pipeline_config cfg = {}) : model_(model), cfg_(cfg) { cfg_.validate(); }

  /// Processes the next frame. If the model throws, the state is untouched.
  template <class Frame>
    requires tracking_model<Model, Frame>
  frame_result step(const Frame& frame) {
    const auto analysis = model_.analyze(frame);
    const auto& dets = model_.detections(analysis);

    // Tracks come first, then candidates, each in creation order.
    std::vector<std::size_t> order;
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t i = 0; i < live_.size(); ++i)
        if ((live_[i].status() == track_status::track) == (pass == 0)) order.push_back(i);
    std::vector<query_type> queries;
    queries.reserve(order.size());
    for (auto i : order) queries.push_back(live_[i].query);
    const auto tracked = model_.track(analysis, std::span<const query_type>(queries));
    if (tracked.size() != queries.size()) throw std::runtime_error("tracker: model returned wrong number of tracks");

    // Everything below only reads `analysis`, so the new state is built aside
    // and committed at the end.
    std::vector<state_type> next;
    std::vector<trajectory> ended;
    for (std::size_t k = 0; k < order.size(); ++k) {
      state_type s = live_[order[k]];
      const bool is_track = s.status() == track_status::track;
      const double y = std::min(2.0 * s.confidence * tracked[k].confidence, cfg_.confidence_cap);
      s.confidence = y;
      const double floor = is_track || cfg_.candidates == candidate_rule::prose ? cfg_.p2 : cfg_.p1;
      if (y < floor) {
        s.history.final_status = track_status::deleted;
        ended.push_back(std::move(s.history));
        continue;
      }
      if (!is_track && y >= cfg_.p1) s.history.final_status = track_status::track;
      s.history.points.push_back({frame_, tracked[k].box, y, s.history.final_status});
      s.query = model_.refresh(analysis, tracked[k].box);
      next.push_back(std::move(s));
    }

    std::vector<std::size_t> by_score(dets.size());
    std::iota(by_score.begin(), by_score.end(), std::size_t{0});
    std::stable_sort(by_score.begin(), by_score.end(),
                     [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    for (std::size_t di : by_score) {
      const auto& d = dets[di];
      if (!(d.score > cfg_.p2)) continue;
      const bool duplicate =
          std::any_of(next.begin(), next.end(), [&](const state_type& s) { return iou(d.box, s.box()) > cfg_.p3; });
      if (duplicate || next.size() >= cfg_.max_tracks) continue;
      state_type s;
      s.history.id = next_id_++;
      s.history.cls = d.cls;
      s.history.final_status = d.score > cfg_.p1 ? track_status::track : track_status::candidate;
      s.history.points.push_back({frame_, d.box, d.score, s.history.final_status});
      s.confidence = d.score;
      s.query = d.query;
      next.push_back(std::move(s));
    }

    live_ = std::move(next);
    std::sort(live_.begin(), live_.end(), [](const state_type& a, const state_type& b) { return a.history.id < b.history.id; });
    for (auto& t : ended) finished_.push_back(std::move(t));

    frame_result out;
    out.frame = frame_;
    for (const auto& s : live_) out.records.push_back({s.history.id, s.box(), s.confidence, s.status()});
    ++frame_;
    return out;
  }

  const std::vector<state_type>& live() const { return live_; }
  std::size_t frames_seen() const { return frame_; }

  /// Every trajectory started so far, ended or not, ordered by id.
  std::vector<trajectory> trajectories() const {
    std::vector<trajectory> all = finished_;
    for (const auto& s : live_) all.push_back(s.history);
    std::sort(all.begin(), all.end(), [](const trajectory& a, const trajectory& b) { return a.id < b.id; });
    return all;
  }

 private:
  Model& model_;
  pipeline_config cfg_;
  std::vector<state_type> live_;
  std::vector<trajectory> finished_;
  std::size_t frame_ = 0;
  int next_id_ = 1;
};

struct video_tracks {
  std::vector<frame_result> frames;
  std::vector<trajectory> trajectories;
};

/// Runs the tracker over a whole clip. Frame 0 seeds tracks through detection.
template <class Model, class Frame>
  requires tracking_model<Model, Frame>
video_tracks track_video(Model& model, const std::vector<Frame>& frames, const pipeline_config& cfg = {}) {
  online_tracker<Model> tracker(model, cfg);
  video_tracks out;
  for (const auto& f : frames) out.frames.push_back(tracker.step(f));
  out.trajectories = tracker.trajectories();
  return out;
}

}  // namespace gcnet

// CLEAR-MOT tracking metrics at a single operating point.
#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcnet/annotations.hpp"
#include "gcnet/geometry.hpp"
#include "gcnet/metrics/assignment.hpp"

namespace gcnet {

using track_set = std::vector<ground_truth_frame>;  // per frame, id-stamped boxes

enum class mot_matching {
  optimal,  // most matches, then highest total IoU
  greedy,   // highest IoU pair first
};

/// Additive counts; several sequences are combined with +=.
struct mot_counts {
  std::size_t sequences = 0;
  std::size_t gt_boxes = 0, pred_boxes = 0, matches = 0;
  double iou_sum = 0.0;
  std::size_t fp = 0, fn = 0, ids = 0, fm = 0;
  std::size_t gt_tracks = 0, mostly_tracked = 0, mostly_lost = 0;
  // Objects annotated in every frame of their clip, and how much of it the
  // single most frequent predicted id covers.
  std::size_t full_tracks = 0;
  double full_coverage_sum = 0.0;
  double full_coverage_min = 1.0;

  mot_counts& operator+=(const mot_counts& o) {
    sequences += o.sequences;
    gt_boxes += o.gt_boxes, pred_boxes += o.pred_boxes, matches += o.matches;
    iou_sum += o.iou_sum;
    fp += o.fp, fn += o.fn, ids += o.ids, fm += o.fm;
    gt_tracks += o.gt_tracks, mostly_tracked += o.mostly_tracked, mostly_lost += o.mostly_lost;
    full_tracks += o.full_tracks;
    full_coverage_sum += o.full_coverage_sum;
    full_coverage_min = std::min(full_coverage_min, o.full_coverage_min);
    return *this;
  }

  double mota() const { return 1.0 - double(fn + fp + ids) / double(std::max<std::size_t>(gt_boxes, 1)); }
  double motp() const { return matches ? iou_sum / double(matches) : 0.0; }
  double mt() const { return gt_tracks ? double(mostly_tracked) / double(gt_tracks) : 0.0; }
  double ml() const { return gt_tracks ? double(mostly_lost) / double(gt_tracks) : 0.0; }
  double ids_per_sequence() const { return sequences ? double(ids) / double(sequences) : 0.0; }
  double full_coverage_mean() const { return full_tracks ? full_coverage_sum / double(full_tracks) : 1.0; }
};

namespace detail {

inline void check_unique_ids(const ground_truth_frame& f, const char* what) {
  std::set<int> seen;
  for (const auto& o : f.objects)
    if (!seen.insert(o.id).second) throw std::invalid_argument(std::string(what) + ": duplicate id " + std::to_string(o.id));
}

// Matches among the not-yet-matched boxes; indices into gt / pred.
inline std::vector<std::pair<std::size_t, std::size_t>> match_remaining(const std::vector<bounding_box>& g,
                                                                        const std::vector<bounding_box>& p,
                                                                        double iou_thr, mot_matching mode) {
  std::vector<double> w(g.size() * p.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double v = iou(g[i], p[j]);
      if (v >= iou_thr && v > 0) w[i * p.size() + j] = v;
    }
  if (mode == mot_matching::optimal) {
    // A bonus per match larger than any total IoU makes the count dominate.
    const double bonus = double(std::min(g.size(), p.size())) + 1.0;
    for (auto& x : w)
      if (x > 0) x += bonus;
    return max_weight_assignment(w, g.size(), p.size());
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs, out;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j)
      if (w[i * p.size() + j] > 0) pairs.emplace_back(i, j);
  std::stable_sort(pairs.begin(), pairs.end(), [&](auto a, auto b) {
    return w[a.first * p.size() + a.second] > w[b.first * p.size() + b.second];
  });
  std::vector<bool> gu(g.size()), pu(p.size());
  for (auto [i, j] : pairs)
    if (!gu[i] && !pu[j]) gu[i] = pu[j] = true, out.emplace_back(i, j);
  return out;
}

}  // namespace detail

/// Frame-by-frame matching. A ground-truth object keeps last frame's
/// prediction while their IoU stays >= iou_thr; the rest are assigned anew.
/// An id switch is a match to a different prediction id than the object's
/// previous match; a fragmentation is a resumed match after a gap.
inline mot_counts clear_mot(const track_set& pred, const track_set& gt, double iou_thr = 0.5,
                            mot_matching mode = mot_matching::optimal) {
  if (pred.size() > gt.size()) throw std::invalid_argument("clear_mot: more prediction frames than ground-truth frames");
  mot_counts c;
  c.sequences = 1;
  std::map<int, int> previous_frame, last_match;
  struct history {
    std::size_t present = 0, matched = 0, fragments = 0;
    bool was_matched = false, gap = false;
    std::map<int, std::size_t> by_pred;
  };
  std::map<int, history> hist;

  for (std::size_t t = 0; t < gt.size(); ++t) {
    static const ground_truth_frame empty;
    const auto& G = gt[t].objects;
    const auto& P = t < pred.size() ? pred[t].objects : empty.objects;
    detail::check_unique_ids(gt[t], "clear_mot ground truth");
    if (t < pred.size()) detail::check_unique_ids(pred[t], "clear_mot prediction");

    std::vector<long> g_to_p(G.size(), -1);
    std::vector<bool> p_used(P.size(), false);
    for (std::size_t i = 0; i < G.size(); ++i) {
      auto it = previous_frame.find(G[i].id);
      if (it == previous_frame.end()) continue;
      for (std::size_t j = 0; j < P.size(); ++j)
        if (!p_used[j] && P[j].id == it->second && iou(G[i].box, P[j].box) >= iou_thr) {
          g_to_p[i] = long(j), p_used[j] = true;
          break;
        }
    }
    std::vector<std::size_t> gi, pj;
    std::vector<bounding_box> gb, pb;
    for (std::size_t i = 0; i < G.size(); ++i)
      if (g_to_p[i] < 0) gi.push_back(i), gb.push_back(G[i].box);
    for (std::size_t j = 0; j < P.size(); ++j)
      if (!p_used[j]) pj.push_back(j), pb.push_back(P[j].box);
    for (auto [a, b] : detail::match_remaining(gb, pb, iou_thr, mode)) g_to_p[gi[a]] = long(pj[b]);

    previous_frame.clear();
    std::size_t m = 0;
    for (std::size_t i = 0; i < G.size(); ++i) {
      auto& h = hist[G[i].id];
      ++h.present;
      if (g_to_p[i] < 0) {
        if (h.was_matched) h.gap = true;
        continue;
      }
      const auto& p = P[std::size_t(g_to_p[i])];
      ++m;
      c.iou_sum += iou(G[i].box, p.box);
      auto lm = last_match.find(G[i].id);
      if (lm != last_match.end() && lm->second != p.id) ++c.ids;
      last_match[G[i].id] = p.id;
      previous_frame[G[i].id] = p.id;
      if (h.gap) ++h.fragments, h.gap = false;
      h.was_matched = true;
      ++h.matched;
      ++h.by_pred[p.id];
    }
    c.gt_boxes += G.size();
    c.pred_boxes += P.size();
    c.matches += m;
    c.fn += G.size() - m;
    c.fp += P.size() - m;
  }

  for (const auto& [id, h] : hist) {
    ++c.gt_tracks;
    const double ratio = double(h.matched) / double(h.present);
    c.mostly_tracked += ratio >= 0.8;
    c.mostly_lost += ratio <= 0.2;
    c.fm += h.fragments;
    if (h.present == gt.size()) {
      std::size_t best = 0;
      for (const auto& [pid, n] : h.by_pred) best = std::max(best, n);
      const double cov = double(best) / double(h.present);
      ++c.full_tracks;
      c.full_coverage_sum += cov;
      c.full_coverage_min = std::min(c.full_coverage_min, cov);
    }
  }
  return c;
}

}  // namespace gcnet

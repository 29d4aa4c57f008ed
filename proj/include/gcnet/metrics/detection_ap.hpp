// Detection average precision with 101-point interpolation.
#pragma once

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "gcnet/annotations.hpp"
#include "gcnet/geometry.hpp"

namespace gcnet {

struct scored_box {
  bounding_box box;
  double score = 0.0;
  int cls = 0;
};

using detection_set = std::vector<std::vector<scored_box>>;  // per frame

struct pr_point {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;  // score of the prediction that produced this point
};

struct ap_result {
  double ap = 0.0;
  std::size_t true_positives = 0, false_positives = 0, ground_truth = 0;
  std::vector<pr_point> curve;  // one point per prediction, in score order
};

/// 101-point interpolated area under a precision/recall curve.
inline double interpolated_ap(const std::vector<pr_point>& curve) {
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double best = 0.0;
    for (const auto& p : curve)
      if (p.recall >= r - 1e-12) best = std::max(best, p.precision);
    sum += best;
  }
  return sum / 101.0;
}

namespace detail {

struct ranked {
  std::size_t frame, index;
  double score;
};

inline std::vector<ranked> rank_predictions(const detection_set& preds, int cls) {
  std::vector<ranked> all;
  for (std::size_t f = 0; f < preds.size(); ++f)
    for (std::size_t i = 0; i < preds[f].size(); ++i)
      if (preds[f][i].cls == cls) all.push_back({f, i, preds[f][i].score});
  std::stable_sort(all.begin(), all.end(), [](const ranked& a, const ranked& b) { return a.score > b.score; });
  return all;
}

inline ap_result class_ap(const detection_set& preds, const std::vector<ground_truth_frame>& gt, double iou_thr, int cls) {
  ap_result out;
  std::vector<std::vector<bool>> taken(gt.size());
  for (std::size_t f = 0; f < gt.size(); ++f) {
    taken[f].assign(gt[f].objects.size(), false);
    for (const auto& o : gt[f].objects) out.ground_truth += o.cls == cls;
  }
  for (const auto& r : rank_predictions(preds, cls)) {
    const auto& p = preds[r.frame][r.index];
    long best = -1;
    double best_iou = iou_thr;
    if (r.frame < gt.size())
      for (std::size_t g = 0; g < gt[r.frame].objects.size(); ++g) {
        const auto& o = gt[r.frame].objects[g];
        if (o.cls != cls || taken[r.frame][g]) continue;
        const double v = iou(p.box, o.box);
        if (v >= best_iou && (best < 0 || v > best_iou)) best = long(g), best_iou = v;
      }
    if (best >= 0) {
      taken[r.frame][std::size_t(best)] = true;
      ++out.true_positives;
    } else {
      ++out.false_positives;
    }
    const double tp = double(out.true_positives);
    out.curve.push_back({out.ground_truth ? tp / double(out.ground_truth) : 0.0,
                         tp / double(out.true_positives + out.false_positives), r.score});
  }
  if (out.ground_truth == 0)
    out.ap = out.false_positives == 0 ? 1.0 : 0.0;
  else
    out.ap = interpolated_ap(out.curve);
  return out;
}

}  // namespace detail

/// Greedy matching in descending score order: each prediction takes the
/// unmatched ground-truth box of its class with the highest IoU >= iou_thr.
/// With several classes the result is the mean over classes that occur in
/// either set, and the curve is that of the lowest class id.
inline ap_result detection_ap(const detection_set& preds, const std::vector<ground_truth_frame>& gt,
                              double iou_thr = 0.5) {
  std::set<int> classes;
  for (const auto& f : preds)
    for (const auto& p : f) classes.insert(p.cls);
  for (const auto& f : gt)
    for (const auto& o : f.objects) classes.insert(o.cls);
  if (classes.empty()) return {1.0, 0, 0, 0, {}};
  ap_result total;
  double sum = 0.0;
  for (int c : classes) {
    auto r = detail::class_ap(preds, gt, iou_thr, c);
    sum += r.ap;
    total.true_positives += r.true_positives;
    total.false_positives += r.false_positives;
    total.ground_truth += r.ground_truth;
    if (total.curve.empty() && c == *classes.begin()) total.curve = std::move(r.curve);
  }
  total.ap = sum / double(classes.size());
  return total;
}

}  // namespace gcnet

// Training losses: penalty-reduced focal loss, CIoU box loss, the detection
// and tracking terms, and their weighted total.
#pragma once

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcnet/numerics/ops.hpp"
#include "gcnet/targets/heatmap.hpp"

namespace gcnet {

class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void reject_nan(const basic_tensor<T>& t, const char* what) {
  for (T v : t.values())
    if (std::isnan(v)) throw numeric_error(std::string(what) + ": NaN input");
}

template <class T>
basic_tensor<T> box_tensor(const std::vector<bounding_box>& boxes) {
  std::vector<T> v;
  v.reserve(boxes.size() * 4);
  for (const auto& b : boxes) {
    v.push_back(T(b.cx));
    v.push_back(T(b.cy));
    v.push_back(T(b.h));
    v.push_back(T(b.w));
  }
  return basic_tensor<T>(shape_t{boxes.size(), 4}, std::move(v));
}

}  // namespace detail

/// Mean over all cells of the penalty-reduced focal loss:
///   -(1 - p)^2 log p                 where target == 1
///   -(1 - y)^2 p^2 log(1 - p)        elsewhere
/// p is clamped to [eps, 1 - eps].
template <class T>
basic_tensor<T> focal_loss(const basic_tensor<T>& pred, const basic_tensor<T>& target, T eps = T(1e-6)) {
  if (pred.shape() != target.shape())
    throw shape_error("focal_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                      shape_string(target.shape()));
  detail::reject_nan(pred, "focal_loss");
  detail::reject_nan(target, "focal_loss");
  const std::size_t n = pred.size();
  if (n == 0) return basic_tensor<T>::scalar(T(0));
  std::vector<T> pos(n), negw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T y = target[i];
    pos[i] = y == T(1) ? T(1) : T(0);
    negw[i] = y == T(1) ? T(0) : (T(1) - y) * (T(1) - y);
  }
  const basic_tensor<T> pos_t(pred.shape(), std::move(pos)), neg_t(pred.shape(), std::move(negw));
  auto p = clamp(pred, eps, T(1) - eps);
  auto one_minus = add_scalar(neg(p), T(1));
  auto pos_term = mul(mul(square(one_minus), log(p)), pos_t);
  auto neg_term = mul(mul(square(p), log(one_minus)), neg_t);
  return scale(add(sum(pos_term), sum(neg_term)), T(-1) / T(n));
}

/// Row-wise CIoU loss of pred [m, 4] against target [m, 4], both
/// (cx, cy, h, w). Returns [m, 1].
template <class T>
basic_tensor<T> ciou_loss(const basic_tensor<T>& pred, const basic_tensor<T>& target) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || pred.shape() != target.shape())
    throw shape_error("ciou_loss: expected matching [m, 4] boxes, got " + shape_string(pred.shape()) + " and " +
                      shape_string(target.shape()));
  for (std::size_t r = 0; r < target.dim(0); ++r)
    if (!(target[r * 4 + 2] > 0 && target[r * 4 + 3] > 0))
      throw std::invalid_argument("ciou_loss: degenerate target box at row " + std::to_string(r));
  auto col = [](const basic_tensor<T>& t, std::size_t k) { return slice_last(t, k, 1); };
  auto pcx = col(pred, 0), pcy = col(pred, 1), ph = col(pred, 2), pw = col(pred, 3);
  auto tcx = col(target, 0), tcy = col(target, 1), th = col(target, 2), tw = col(target, 3);
  auto half = [](const basic_tensor<T>& t) { return scale(t, T(0.5)); };
  auto pl = sub(pcx, half(pw)), pr = add(pcx, half(pw)), pt = sub(pcy, half(ph)), pb = add(pcy, half(ph));
  auto tl = sub(tcx, half(tw)), tr = add(tcx, half(tw)), tt = sub(tcy, half(th)), tb = add(tcy, half(th));

  auto iw = relu(sub(minimum(pr, tr), maximum(pl, tl)));
  auto ih = relu(sub(minimum(pb, tb), maximum(pt, tt)));
  auto inter = mul(iw, ih);
  auto uni = sub(add(mul(ph, pw), mul(th, tw)), inter);
  auto iou = div(inter, uni);

  auto rho2 = add(square(sub(pcx, tcx)), square(sub(pcy, tcy)));
  auto cw = sub(maximum(pr, tr), minimum(pl, tl));
  auto ch = sub(maximum(pb, tb), minimum(pt, tt));
  auto diag2 = add(square(cw), square(ch));

  const T k = T(4) / T(std::numbers::pi * std::numbers::pi);
  auto v = scale(square(sub(atan(div(tw, th)), atan(div(pw, ph)))), k);
  auto one_minus_iou = add_scalar(neg(iou), T(1));
  auto alpha = div(v, add_scalar(add(one_minus_iou, v), T(1e-7)));
  return add(add(one_minus_iou, div(rho2, diag2)), mul(alpha, v));
}

inline double ciou_loss(const bounding_box& pred, const bounding_box& target) {
  no_grad_guard ng;
  return ciou_loss(detail::box_tensor<double>({pred}), detail::box_tensor<double>({target})).item();
}

template <class T>
struct loss_pair {
  basic_tensor<T> cla;
  basic_tensor<T> reg;
};

/// Weighted CIoU summed over selected rows of boxes [n, hw, 4] and averaged
/// over the batch.
template <class T>
basic_tensor<T> weighted_box_loss(const basic_tensor<T>& boxes, const std::vector<std::size_t>& rows,
                                  const std::vector<bounding_box>& targets, const std::vector<T>& weights) {
  if (rows.empty()) return basic_tensor<T>::scalar(T(0));
  const std::size_t batch = boxes.dim(0);
  auto flat = reshape(boxes, shape_t{boxes.dim(0) * boxes.dim(1), 4});
  auto picked = gather_rows(flat, rows);
  auto per_row = ciou_loss(picked, detail::box_tensor<T>(targets));
  basic_tensor<T> w(shape_t{rows.size(), 1}, weights);
  return scale(sum(mul(per_row, w)), T(1) / T(batch));
}

/// Detection terms for a batch. confidence: [n, h', w', classes];
/// boxes: [n, h'*w', 4] in feature-map units.
template <class T>
loss_pair<T> detection_loss(const basic_tensor<T>& confidence, const basic_tensor<T>& boxes,
                            const std::vector<target_maps>& targets) {
  if (confidence.rank() != 4 || confidence.dim(0) != targets.size())
    throw shape_error("detection_loss: confidence " + shape_string(confidence.shape()) + " vs " +
                      std::to_string(targets.size()) + " targets");
  const std::size_t hw = confidence.dim(1) * confidence.dim(2);
  if (boxes.rank() != 3 || boxes.dim(0) != targets.size() || boxes.dim(1) != hw || boxes.dim(2) != 4)
    throw shape_error("detection_loss: boxes " + shape_string(boxes.shape()) + " do not match the confidence map");
  loss_pair<T> out;
  out.cla = focal_loss(confidence, heatmap_batch<T>(targets));
  std::vector<std::size_t> rows;
  std::vector<bounding_box> tgt;
  std::vector<T> w;
  for (std::size_t b = 0; b < targets.size(); ++b)
    for (std::size_t p : targets[b].positive_cells()) {
      rows.push_back(b * hw + p);
      tgt.push_back(targets[b].box[p]);
      w.push_back(T(targets[b].weight[p]));
    }
  out.reg = weighted_box_loss(boxes, rows, tgt, w);
  return out;
}

/// Per-cell tracking targets for queries taken from an earlier frame. A cell
/// is positive when it is a detection positive there and its object is still
/// annotated in the current frame.
struct tracking_targets {
  std::vector<double> label;           // [h'*w'] in {0, 1}
  std::vector<std::size_t> cells;      // positive cells
  std::vector<bounding_box> box;       // current-frame box per positive cell
  std::vector<double> weight;          // regression weight per positive cell
};

/// `current` boxes are in feature-map units.
inline tracking_targets make_tracking_targets(const target_maps& previous, const ground_truth_frame& current) {
  tracking_targets t;
  t.label.assign(previous.positive.size(), 0.0);
  for (std::size_t p = 0; p < previous.positive.size(); ++p) {
    if (!previous.positive[p]) continue;
    const auto* obj = current.find(previous.object_id[p]);
    if (!obj) continue;
    t.label[p] = 1.0;
    t.cells.push_back(p);
    t.box.push_back(obj->box);
    t.weight.push_back(previous.weight[p]);
  }
  return t;
}

/// Tracking terms for a batch. confidence: [n, h'*w', 1]; boxes: [n, h'*w', 4].
template <class T>
loss_pair<T> tracking_loss(const basic_tensor<T>& confidence, const basic_tensor<T>& boxes,
                           const std::vector<tracking_targets>& targets) {
  if (targets.empty()) return {basic_tensor<T>::scalar(T(0)), basic_tensor<T>::scalar(T(0))};
  const std::size_t hw = targets.front().label.size();
  if (confidence.rank() != 3 || confidence.dim(0) != targets.size() || confidence.dim(1) != hw ||
      confidence.dim(2) != 1)
    throw shape_error("tracking_loss: confidence " + shape_string(confidence.shape()) + " vs " +
                      std::to_string(targets.size()) + " targets of " + std::to_string(hw) + " cells");
  std::vector<T> labels;
  std::vector<std::size_t> rows;
  std::vector<bounding_box> tgt;
  std::vector<T> w;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const auto& t = targets[b];
    if (t.label.size() != hw) throw shape_error("tracking_loss: targets differ in size");
    for (double l : t.label) labels.push_back(T(l));
    for (std::size_t i = 0; i < t.cells.size(); ++i) {
      rows.push_back(b * hw + t.cells[i]);
      tgt.push_back(t.box[i]);
      w.push_back(T(t.weight[i]));
    }
  }
  loss_pair<T> out;
  out.cla = focal_loss(confidence, basic_tensor<T>(confidence.shape(), std::move(labels)));
  out.reg = weighted_box_loss(boxes, rows, tgt, w);
  return out;
}

struct loss_breakdown {
  double d_cla = 0, d_reg = 0, t_cla = 0, t_reg = 0, total = 0;
};

inline std::string describe(const loss_breakdown& l) {
  std::ostringstream os;
  os << "L_d_cla=" << l.d_cla << " L_d_reg=" << l.d_reg << " L_t_cla=" << l.t_cla << " L_t_reg=" << l.t_reg;
  return os.str();
}

/// cla_d + cla_t + 0.1 (reg_d + reg_t); any non-finite part is an error.
inline double total_loss(const loss_breakdown& parts) {
  for (double v : {parts.d_cla, parts.d_reg, parts.t_cla, parts.t_reg})
    if (!std::isfinite(v)) throw numeric_error("non-finite loss term: " + describe(parts));
  return parts.d_cla + parts.t_cla + 0.1 * (parts.d_reg + parts.t_reg);
}

/// Differentiable total. Pass an undefined tracking pair for detection-only
/// training; its terms count as 0.
template <class T>
basic_tensor<T> total_loss(const loss_pair<T>& detection, const loss_pair<T>& tracking, loss_breakdown& parts) {
  auto item = [](const basic_tensor<T>& t) { return t.defined() ? double(t.item()) : 0.0; };
  parts.d_cla = item(detection.cla);
  parts.d_reg = item(detection.reg);
  parts.t_cla = item(tracking.cla);
  parts.t_reg = item(tracking.reg);
  parts.total = total_loss(parts);
  auto cla = tracking.cla.defined() ? add(detection.cla, tracking.cla) : detection.cla;
  auto reg = tracking.reg.defined() ? add(detection.reg, tracking.reg) : detection.reg;
  return add(cla, scale(reg, T(0.1)));
}

}  // namespace gcnet

// Training targets on the stride-8 grid: Gaussian class heatmaps and the
// assignment of grid cells to ground-truth boxes.
//
// Coordinates are feature-map units. Cell (i, j) spans rows [i, i+1) and
// columns [j, j+1), so its center sits at (i + 0.5, j + 0.5).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcnet/annotations.hpp"
#include "gcnet/numerics/tensor.hpp"

namespace gcnet {

struct gaussian_sigma {
  double row;  // from box height
  double col;  // from box width
};

inline gaussian_sigma sigma_for(const bounding_box& box, double iou_threshold) {
  const double k = (1.0 - iou_threshold) / (3.0 * (1.0 + iou_threshold));
  return {box.h * k, box.w * k};
}

/// Grid cell holding the box center, clamped into the map.
struct center_cell {
  std::size_t row = 0, col = 0;
  bool clamped = false;
};

inline center_cell snap_center(const bounding_box& box, std::size_t rows, std::size_t cols) {
  auto snap = [](double v, std::size_t n, bool& clamped) {
    const double f = std::floor(v);
    if (!(f >= 0)) {
      clamped = true;
      return std::size_t{0};
    }
    if (f > double(n - 1)) {
      clamped = true;
      return n - 1;
    }
    return static_cast<std::size_t>(f);
  };
  center_cell c;
  c.row = snap(box.cy, rows, c.clamped);
  c.col = snap(box.cx, cols, c.clamped);
  return c;
}

/// One object's Gaussian G over a rows x cols grid, row-major. The center
/// cell is exactly 1.
inline std::vector<double> object_gaussian(const bounding_box& box, std::size_t rows, std::size_t cols,
                                           double iou_threshold, bool* clamped = nullptr) {
  if (!(box.h > 0 && box.w > 0))
    throw std::invalid_argument("gaussian_heatmap: box height and width must be positive");
  const auto s = sigma_for(box, iou_threshold);
  const auto center = snap_center(box, rows, cols);
  if (clamped) *clamped = center.clamped;
  const double cy = center.clamped ? center.row + 0.5 : box.cy;
  const double cx = center.clamped ? center.col + 0.5 : box.cx;
  std::vector<double> g(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double dr = i + 0.5 - cy, dc = j + 0.5 - cx;
      g[i * cols + j] = std::exp(-dr * dr / (2 * s.row * s.row) - dc * dc / (2 * s.col * s.col));
    }
  g[center.row * cols + center.col] = 1.0;
  return g;
}

struct assignment {
  std::vector<std::uint8_t> positive;  // [rows*cols]
  std::vector<double> weight;          // 0, 1, or 2 at cells whose max G is exactly 1
  std::vector<int> object;             // index into the object list, -1 when negative
};

/// Positive iff some G > threshold and sum(G) - max(G) < threshold. The box
/// target of a positive cell is the object with the largest G there.
inline assignment assign_positives(const std::vector<std::vector<double>>& g, std::size_t cells,
                                   double threshold = 0.3) {
  assignment a;
  a.positive.assign(cells, 0);
  a.weight.assign(cells, 0.0);
  a.object.assign(cells, -1);
  for (std::size_t p = 0; p < cells; ++p) {
    double total = 0, best = -1;
    int arg = -1;
    for (std::size_t n = 0; n < g.size(); ++n) {
      total += g[n][p];
      if (g[n][p] > best) {
        best = g[n][p];
        arg = int(n);
      }
    }
    if (arg >= 0 && best > threshold && total - best < threshold) {
      a.positive[p] = 1;
      a.weight[p] = best == 1.0 ? 2.0 : 1.0;
      a.object[p] = arg;
    }
  }
  return a;
}

struct target_maps {
  std::size_t rows = 0, cols = 0, classes = 1;
  std::vector<double> heatmap;         // Y_gt [rows, cols, classes]
  std::vector<std::uint8_t> positive;  // [rows*cols]
  std::vector<double> weight;          // regression weights
  std::vector<bounding_box> box;       // box target at positive cells
  std::vector<int> object_id;          // ground-truth id at positive cells, -1 elsewhere
  std::size_t clamped_centers = 0;

  std::vector<std::size_t> positive_cells() const {
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < positive.size(); ++p)
      if (positive[p]) out.push_back(p);
    return out;
  }
};

/// Targets for one frame. `gt` boxes are in feature-map units.
inline target_maps gaussian_heatmap(const ground_truth_frame& gt, std::size_t rows, std::size_t cols,
                                    std::size_t classes, double iou_threshold = 0.3) {
  if (!(iou_threshold > 0 && iou_threshold < 1))
    throw std::invalid_argument("gaussian_heatmap: iou_threshold must lie in (0, 1)");
  if (rows == 0 || cols == 0 || classes == 0) throw std::invalid_argument("gaussian_heatmap: empty map");
  target_maps t;
  t.rows = rows;
  t.cols = cols;
  t.classes = classes;
  t.heatmap.assign(rows * cols * classes, 0.0);
  std::vector<std::vector<double>> g;
  g.reserve(gt.objects.size());
  for (const auto& o : gt.objects) {
    if (o.cls < 0 || std::size_t(o.cls) >= classes)
      throw std::invalid_argument("gaussian_heatmap: class " + std::to_string(o.cls) + " out of range");
    bool clamped = false;
    g.push_back(object_gaussian(o.box, rows, cols, iou_threshold, &clamped));
    t.clamped_centers += clamped;
    for (std::size_t p = 0; p < rows * cols; ++p) {
      double& y = t.heatmap[p * classes + o.cls];
      y = std::max(y, g.back()[p]);
    }
  }
  auto a = assign_positives(g, rows * cols);
  t.positive = std::move(a.positive);
  t.weight = std::move(a.weight);
  t.box.assign(rows * cols, bounding_box{});
  t.object_id.assign(rows * cols, -1);
  for (std::size_t p = 0; p < rows * cols; ++p)
    if (a.object[p] >= 0) {
      t.box[p] = gt.objects[a.object[p]].box;
      t.object_id[p] = gt.objects[a.object[p]].id;
    }
  return t;
}

/// Stacks heatmaps of a batch into [n, rows, cols, classes].
template <class T>
basic_tensor<T> heatmap_batch(const std::vector<target_maps>& targets) {
  if (targets.empty()) throw std::invalid_argument("heatmap_batch: empty batch");
  const auto& f = targets.front();
  std::vector<T> data;
  data.reserve(targets.size() * f.heatmap.size());
  for (const auto& t : targets) {
    if (t.rows != f.rows || t.cols != f.cols || t.classes != f.classes)
      throw shape_error("heatmap_batch: targets differ in size");
    for (double v : t.heatmap) data.push_back(static_cast<T>(v));
  }
  return basic_tensor<T>(shape_t{targets.size(), f.rows, f.cols, f.classes}, std::move(data));
}

}  // namespace gcnet

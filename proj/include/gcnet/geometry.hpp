#pragma once

#include <algorithm>
#include <ostream>

namespace gcnet {

/// Axis-aligned box in center/size form. cx runs along columns, cy along
/// rows; h is the row extent and w the column extent.
struct bounding_box {
  double cx = 0.0;
  double cy = 0.0;
  double h = 0.0;
  double w = 0.0;

  double left() const { return cx - w / 2; }
  double right() const { return cx + w / 2; }
  double top() const { return cy - h / 2; }
  double bottom() const { return cy + h / 2; }
  double area() const { return h * w; }

  static bounding_box from_edges(double left, double top, double right, double bottom) {
    return {(left + right) / 2, (top + bottom) / 2, bottom - top, right - left};
  }

  bounding_box scaled(double factor) const { return {cx * factor, cy * factor, h * factor, w * factor}; }

  bool operator==(const bounding_box&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const bounding_box& b) {
  return os << "[cx=" << b.cx << " cy=" << b.cy << " h=" << b.h << " w=" << b.w << ']';
}

inline double intersection_area(const bounding_box& a, const bounding_box& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  return (iw > 0 && ih > 0) ? iw * ih : 0.0;
}

/// Intersection over union in [0, 1]; 0 when the union is empty.
inline double iou(const bounding_box& a, const bounding_box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace gcnet

#pragma once

#include <vector>

#include "gcnet/geometry.hpp"

namespace gcnet {

struct labeled_box {
  int id = 0;
  int cls = 0;
  bounding_box box;
  bool fully_visible = true;
};

/// Annotated objects of one frame.
struct ground_truth_frame {
  std::vector<labeled_box> objects;

  const labeled_box* find(int id) const {
    for (const auto& o : objects)
      if (o.id == id) return &o;
    return nullptr;
  }

  ground_truth_frame scaled(double factor) const {
    ground_truth_frame out = *this;
    for (auto& o : out.objects) o.box = o.box.scaled(factor);
    return out;
  }
};

}  // namespace gcnet

// Training pairs (I_{t-i}, I_t) and their augmentation: horizontal flip,
// brightness and scale, applied jointly to both frames and their boxes.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "gcnet/synthdata/scene.hpp"

namespace gcnet {

struct train_sample {
  rgb_image previous, current;
  ground_truth_frame gt_previous, gt_current;
  std::size_t gap = 1;
};

/// Pair from one clip with gap drawn uniformly from {1..max_gap} (clamped to
/// the clip length).
inline train_sample sample_pair(const sequence& seq, std::mt19937_64& rng, std::size_t max_gap = 5) {
  if (seq.frames.size() < 2) throw std::invalid_argument("sample_pair: clip needs at least two frames");
  const std::size_t top = std::min(max_gap, seq.frames.size() - 1);
  const std::size_t gap = std::uniform_int_distribution<std::size_t>(1, top)(rng);
  const std::size_t t = std::uniform_int_distribution<std::size_t>(gap, seq.frames.size() - 1)(rng);
  return {seq.frames[t - gap], seq.frames[t], seq.gt[t - gap], seq.gt[t], gap};
}

struct augment_options {
  double flip_probability = 0.5;
  double min_brightness = 0.75, max_brightness = 1.25;
  double min_scale = 0.8, max_scale = 1.2;
  double scale_probability = 0.5;
};

inline train_sample flip_sample(const train_sample& s) {
  train_sample out = s;
  out.previous = flip_horizontal(s.previous);
  out.current = flip_horizontal(s.current);
  for (auto* gt : {&out.gt_previous, &out.gt_current})
    for (auto& o : gt->objects) o.box.cx = double(s.previous.width) - o.box.cx;
  return out;
}

inline train_sample brighten_sample(const train_sample& s, double factor) {
  train_sample out = s;
  out.previous = scale_brightness(s.previous, factor);
  out.current = scale_brightness(s.current, factor);
  return out;
}

/// Resizes both frames by `factor`, snapping each side to a multiple of 8;
/// boxes follow the per-axis ratio actually applied.
inline train_sample scale_sample(const train_sample& s, double factor) {
  auto snap = [](double v) { return std::max<std::size_t>(8, std::size_t(std::lround(v / 8.0)) * 8); };
  const std::size_t h = snap(double(s.previous.height) * factor), w = snap(double(s.previous.width) * factor);
  const double fy = double(h) / double(s.previous.height), fx = double(w) / double(s.previous.width);
  train_sample out = s;
  out.previous = resize_bilinear(s.previous, h, w);
  out.current = resize_bilinear(s.current, h, w);
  for (auto* gt : {&out.gt_previous, &out.gt_current})
    for (auto& o : gt->objects) o.box = {o.box.cx * fx, o.box.cy * fy, o.box.h * fy, o.box.w * fx};
  return out;
}

inline train_sample augment(const train_sample& s, std::mt19937_64& rng, const augment_options& opt = {}) {
  std::uniform_real_distribution<double> u(0, 1);
  train_sample out = s;
  if (u(rng) < opt.flip_probability) out = flip_sample(out);
  out = brighten_sample(out, opt.min_brightness + u(rng) * (opt.max_brightness - opt.min_brightness));
  if (u(rng) < opt.scale_probability) out = scale_sample(out, opt.min_scale + u(rng) * (opt.max_scale - opt.min_scale));
  return out;
}

/// Places the sample on a height x width canvas at (top, left), cropping or
/// padding with mid gray. Boxes are clipped; objects left with less than
/// `min_visible` of their area are dropped.
inline train_sample fit_canvas(const train_sample& s, std::size_t height, std::size_t width, long top, long left,
                               double min_visible = 0.3) {
  auto place = [&](const rgb_image& im) {
    rgb_image out(height, width, 115);
    for (std::size_t r = 0; r < height; ++r) {
      const long sr = long(r) - top;
      if (sr < 0 || sr >= long(im.height)) continue;
      for (std::size_t c = 0; c < width; ++c) {
        const long sc = long(c) - left;
        if (sc < 0 || sc >= long(im.width)) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) out.at(r, c, ch) = im.at(sr, sc, ch);
      }
    }
    return out;
  };
  // The visible part of the source image on the canvas.
  const double vl = std::max(0.0, double(left)), vt = std::max(0.0, double(top));
  const double vr = std::min(double(width), double(left) + double(s.previous.width));
  const double vb = std::min(double(height), double(top) + double(s.previous.height));
  auto move = [&](const ground_truth_frame& gt) {
    ground_truth_frame out;
    for (const auto& o : gt.objects) {
      bounding_box b{o.box.cx + double(left), o.box.cy + double(top), o.box.h, o.box.w};
      const bool inside = b.left() >= vl && b.top() >= vt && b.right() <= vr && b.bottom() <= vb;
      bounding_box c = inside ? b
                              : bounding_box::from_edges(std::max(b.left(), vl), std::max(b.top(), vt),
                                                         std::min(b.right(), vr), std::min(b.bottom(), vb));
      if (c.w < 2 || c.h < 2 || c.area() < min_visible * b.area()) continue;
      labeled_box lb = o;
      lb.box = c;
      lb.fully_visible = o.fully_visible && inside;
      out.objects.push_back(lb);
    }
    return out;
  };
  return {place(s.previous), place(s.current), move(s.gt_previous), move(s.gt_current), s.gap};
}

/// Random placement of an augmented sample on the training canvas.
inline train_sample fit_canvas(const train_sample& s, std::size_t height, std::size_t width, std::mt19937_64& rng) {
  auto offset = [&](std::size_t canvas, std::size_t image) {
    const long lo = std::min(0L, long(canvas) - long(image)), hi = std::max(0L, long(canvas) - long(image));
    return std::uniform_int_distribution<long>(lo, hi)(rng);
  };
  const long top = offset(height, s.previous.height);
  const long left = offset(width, s.previous.width);
  return fit_canvas(s, height, width, top, left);
}

}  // namespace gcnet

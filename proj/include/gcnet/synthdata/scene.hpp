// Synthetic traffic-like clips: textured rectangles moving with near-constant
// velocity over a noisy background, entering and leaving the view.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gcnet/annotations.hpp"
#include "gcnet/layers/config.hpp"
#include "gcnet/synthdata/image.hpp"

namespace gcnet {

struct scene_config {
  std::size_t height = 128;
  std::size_t width = 224;
  std::size_t min_objects = 1;
  std::size_t max_objects = 6;
  double min_size = 14;  // pixels, per side
  double max_size = 40;
  double min_speed = 0.5;  // pixels per frame
  double max_speed = 3.0;
  double velocity_noise = 0.15;
  double enter_probability = 0.3;  // chance an object starts outside and drives in
  double min_visible = 0.3;        // visible area fraction for an annotation
  bool allow_occlusion = false;
  std::size_t frames = 40;
  std::uint64_t seed = 1;

  void validate() const {
    if (height == 0 || width == 0 || height % 8 || width % 8)
      throw config_error("scene: height and width must be positive multiples of 8 (got " + std::to_string(height) +
                         "x" + std::to_string(width) + ")");
    if (min_objects > max_objects) throw config_error("scene: min_objects exceeds max_objects");
    if (!(min_size > 0 && min_size <= max_size)) throw config_error("scene: size range must satisfy 0 < min <= max");
    if (max_size >= double(std::min(height, width)))
      throw config_error("scene: objects larger than the image (max_size >= min(height, width))");
    if (!(min_speed >= 0 && min_speed <= max_speed)) throw config_error("scene: speed range must satisfy 0 <= min <= max");
    if (velocity_noise < 0) throw config_error("scene: velocity_noise must be non-negative");
    if (!(enter_probability >= 0 && enter_probability <= 1)) throw config_error("scene: enter_probability in [0, 1]");
    if (!(min_visible > 0 && min_visible <= 1)) throw config_error("scene: min_visible in (0, 1]");
    if (frames == 0) throw config_error("scene: frames must be positive");
  }

  std::map<std::string, std::string> to_kv() const {
    auto num = [](double v) {
      char b[64];
      std::snprintf(b, sizeof b, "%.17g", v);
      return std::string(b);
    };
    return {{"height", std::to_string(height)},
            {"width", std::to_string(width)},
            {"min_objects", std::to_string(min_objects)},
            {"max_objects", std::to_string(max_objects)},
            {"min_size", num(min_size)},
            {"max_size", num(max_size)},
            {"min_speed", num(min_speed)},
            {"max_speed", num(max_speed)},
            {"velocity_noise", num(velocity_noise)},
            {"enter_probability", num(enter_probability)},
            {"min_visible", num(min_visible)},
            {"allow_occlusion", allow_occlusion ? "true" : "false"},
            {"frames", std::to_string(frames)},
            {"seed", std::to_string(seed)}};
  }

  static scene_config from_kv(const std::map<std::string, std::string>& kv) {
    scene_config c;
    auto get = [&](const char* k) -> const std::string* {
      auto it = kv.find(k);
      return it == kv.end() ? nullptr : &it->second;
    };
    try {
      if (auto v = get("height")) c.height = std::stoul(*v);
      if (auto v = get("width")) c.width = std::stoul(*v);
      if (auto v = get("min_objects")) c.min_objects = std::stoul(*v);
      if (auto v = get("max_objects")) c.max_objects = std::stoul(*v);
      if (auto v = get("min_size")) c.min_size = std::stod(*v);
      if (auto v = get("max_size")) c.max_size = std::stod(*v);
      if (auto v = get("min_speed")) c.min_speed = std::stod(*v);
      if (auto v = get("max_speed")) c.max_speed = std::stod(*v);
      if (auto v = get("velocity_noise")) c.velocity_noise = std::stod(*v);
      if (auto v = get("enter_probability")) c.enter_probability = std::stod(*v);
      if (auto v = get("min_visible")) c.min_visible = std::stod(*v);
      if (auto v = get("frames")) c.frames = std::stoul(*v);
      if (auto v = get("seed")) c.seed = std::stoull(*v);
    } catch (const std::logic_error&) {
      throw config_error("scene: malformed numeric value");
    }
    if (auto v = get("allow_occlusion")) {
      if (*v != "true" && *v != "false") throw config_error("scene: allow_occlusion must be true or false");
      c.allow_occlusion = *v == "true";
    }
    c.validate();
    return c;
  }
};

struct object_texture {
  double color_a[3];
  double color_b[3];
  int pattern = 0;  // 0 horizontal stripes, 1 vertical stripes, 2 checker
  double period = 4;

  const double* sample(double u, double v) const {
    long k = 0;
    switch (pattern) {
      case 0: k = long(std::floor(v / period)); break;
      case 1: k = long(std::floor(u / period)); break;
      default: k = long(std::floor(u / period)) + long(std::floor(v / period)); break;
    }
    return (k & 1) ? color_b : color_a;
  }
};

/// One object's path: box (pixels, unclipped) per frame.
struct object_track {
  int id = 0;
  object_texture texture;
  std::vector<bounding_box> boxes;
};

struct sequence {
  std::vector<rgb_image> frames;
  std::vector<ground_truth_frame> gt;
  std::vector<object_track> objects;
};

/// Constant-velocity path with per-frame velocity jitter.
inline std::vector<bounding_box> simulate_path(bounding_box start, double vx, double vy, double noise,
                                               std::size_t frames, std::mt19937_64& rng) {
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::vector<bounding_box> path;
  path.reserve(frames);
  bounding_box b = start;
  for (std::size_t t = 0; t < frames; ++t) {
    path.push_back(b);
    b.cx += vx + (noise > 0 ? noise * jitter(rng) : 0.0);
    b.cy += vy + (noise > 0 ? noise * jitter(rng) : 0.0);
  }
  return path;
}

inline bounding_box clip_to_image(const bounding_box& b, double height, double width) {
  return bounding_box::from_edges(std::max(b.left(), 0.0), std::max(b.top(), 0.0), std::min(b.right(), width),
                                  std::min(b.bottom(), height));
}

/// Annotation of a box, if enough of it is inside the image.
inline bool annotate(const bounding_box& b, const scene_config& cfg, bounding_box& clipped, bool& fully_visible) {
  fully_visible = b.left() >= 0 && b.top() >= 0 && b.right() <= double(cfg.width) && b.bottom() <= double(cfg.height);
  clipped = fully_visible ? b : clip_to_image(b, double(cfg.height), double(cfg.width));
  if (clipped.w < 2 || clipped.h < 2) return false;
  return clipped.area() >= cfg.min_visible * b.area();
}

namespace detail {

inline double pixel_coverage(double lo, double hi, double p) { return std::max(0.0, std::min(hi, p + 1) - std::max(lo, p)); }

inline void draw_background(rgb_image& im, std::uint64_t seed, std::size_t frame) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + frame);
  std::uniform_real_distribution<double> noise(-0.04, 0.04);
  for (std::size_t r = 0; r < im.height; ++r) {
    const double base = 0.38 + 0.12 * double(r) / double(im.height);
    for (std::size_t c = 0; c < im.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) im.at(r, c, ch) = quantize(base + noise(rng));
  }
}

inline void draw_object(rgb_image& im, const bounding_box& b, const object_texture& tex) {
  const long r0 = std::max(0L, long(std::floor(b.top()))), r1 = std::min(long(im.height) - 1, long(std::ceil(b.bottom())));
  const long c0 = std::max(0L, long(std::floor(b.left()))), c1 = std::min(long(im.width) - 1, long(std::ceil(b.right())));
  for (long r = r0; r <= r1; ++r) {
    const double cy = pixel_coverage(b.top(), b.bottom(), double(r));
    if (cy <= 0) continue;
    for (long c = c0; c <= c1; ++c) {
      const double cov = cy * pixel_coverage(b.left(), b.right(), double(c));
      if (cov <= 0) continue;
      const double* color = tex.sample(c + 0.5 - b.left(), r + 0.5 - b.top());
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double bg = im.at(r, c, ch) / 255.0;
        im.at(r, c, ch) = quantize(bg * (1 - cov) + color[ch] * cov);
      }
    }
  }
}

inline bool paths_collide(const std::vector<bounding_box>& a, const std::vector<bounding_box>& b, double height,
                          double width) {
  for (std::size_t t = 0; t < a.size(); ++t) {
    const bounding_box ga{a[t].cx, a[t].cy, a[t].h + 2, a[t].w + 2};
    if (intersection_area(ga, b[t]) <= 0) continue;
    // Overlap only matters while it is on screen.
    if (intersection_area(clip_to_image(ga, height, width), clip_to_image(b[t], height, width)) > 0) return true;
  }
  return false;
}

inline object_texture random_texture(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  object_texture t;
  // Saturated colors keep objects apart from the gray background.
  for (auto* color : {t.color_a, t.color_b}) {
    const int strong = int(u(rng) * 3) % 3;
    for (int ch = 0; ch < 3; ++ch) color[ch] = ch == strong ? 0.75 + 0.25 * u(rng) : 0.05 + 0.5 * u(rng);
  }
  t.pattern = int(u(rng) * 3) % 3;
  t.period = 3 + std::floor(u(rng) * 5);
  return t;
}

}  // namespace detail

/// Renders frames and annotations for fixed object paths. Objects are drawn
/// in list order.
inline sequence render_sequence(const scene_config& cfg, std::vector<object_track> objects) {
  cfg.validate();
  sequence s;
  s.objects = std::move(objects);
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    rgb_image im(cfg.height, cfg.width);
    detail::draw_background(im, cfg.seed, t);
    ground_truth_frame gt;
    for (const auto& o : s.objects) {
      if (o.boxes.size() != cfg.frames) throw std::invalid_argument("render_sequence: path length differs from frames");
      detail::draw_object(im, o.boxes[t], o.texture);
      labeled_box lb;
      lb.id = o.id;
      if (annotate(o.boxes[t], cfg, lb.box, lb.fully_visible)) gt.objects.push_back(lb);
    }
    s.frames.push_back(std::move(im));
    s.gt.push_back(std::move(gt));
  }
  return s;
}

/// Samples a clip from the config's seed. Without occlusion, an object whose
/// path would overlap an accepted one on screen is re-drawn; after 50 failed
/// attempts it is dropped.
inline sequence generate_sequence(const scene_config& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<std::size_t> count(cfg.min_objects, cfg.max_objects);
  const double H = double(cfg.height), W = double(cfg.width);
  const std::size_t n = count(rng);
  std::vector<object_track> objects;
  for (std::size_t k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double h = cfg.min_size + u(rng) * (cfg.max_size - cfg.min_size);
      const double w = cfg.min_size + u(rng) * (cfg.max_size - cfg.min_size);
      const double speed = cfg.min_speed + u(rng) * (cfg.max_speed - cfg.min_speed);
      const double angle = u(rng) * 2 * 3.141592653589793;
      double vx = speed * std::cos(angle), vy = speed * std::sin(angle);
      bounding_box start{w / 2 + u(rng) * (W - w), h / 2 + u(rng) * (H - h), h, w};
      if (u(rng) < cfg.enter_probability) {
        // Start just past the edge the object is heading away from.
        if (std::abs(vx) * H > std::abs(vy) * W)
          start.cx = vx > 0 ? -w / 2 - u(rng) * 10 : W + w / 2 + u(rng) * 10;
        else
          start.cy = vy > 0 ? -h / 2 - u(rng) * 10 : H + h / 2 + u(rng) * 10;
      }
      object_track o;
      o.id = int(k) + 1;
      o.texture = detail::random_texture(rng);
      o.boxes = simulate_path(start, vx, vy, cfg.velocity_noise, cfg.frames, rng);
      const bool clash = !cfg.allow_occlusion && std::any_of(objects.begin(), objects.end(), [&](const object_track& a) {
        return detail::paths_collide(a.boxes, o.boxes, H, W);
      });
      if (!clash) {
        objects.push_back(std::move(o));
        break;
      }
    }
  }
  return render_sequence(cfg, std::move(objects));
}

}  // namespace gcnet

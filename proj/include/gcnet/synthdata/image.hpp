// 8-bit RGB images, binary PPM I/O and the pixel operations used by data
// augmentation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcnet/numerics/tensor.hpp"

namespace gcnet {

struct rgb_image {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB

  rgb_image() = default;
  rgb_image(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w * 3, fill) {}

  std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) { return pixels[(r * width + c) * 3 + ch]; }
  std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const { return pixels[(r * width + c) * 3 + ch]; }

  bool operator==(const rgb_image&) const = default;
};

inline std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

/// Stacks images into a [n, h, w, 3] tensor with values in [0, 1].
template <class T>
basic_tensor<T> to_tensor(const std::vector<const rgb_image*>& images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const std::size_t h = images[0]->height, w = images[0]->width;
  std::vector<T> v;
  v.reserve(images.size() * h * w * 3);
  for (const auto* im : images) {
    if (im->height != h || im->width != w) throw shape_error("to_tensor: images differ in size");
    for (auto p : im->pixels) v.push_back(T(p) / T(255));
  }
  return basic_tensor<T>(shape_t{images.size(), h, w, 3}, std::move(v));
}

template <class T>
basic_tensor<T> to_tensor(const rgb_image& image) {
  return to_tensor<T>(std::vector<const rgb_image*>{&image});
}

class image_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_ppm(const std::string& path, const rgb_image& im) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw image_error("cannot write " + path);
  out << "P6\n" << im.width << ' ' << im.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(im.pixels.data()), std::streamsize(im.pixels.size()));
}

inline rgb_image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw image_error("cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] != '#') return t;
      std::string rest;
      std::getline(in, rest);
    }
    throw image_error(path + ": truncated header");
  };
  if (token() != "P6") throw image_error(path + ": not a binary PPM (P6)");
  rgb_image im;
  try {
    im.width = std::stoul(token());
    im.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw image_error(path + ": only 8-bit PPM is supported");
  } catch (const std::logic_error&) {
    throw image_error(path + ": malformed header");
  }
  in.get();
  im.pixels.resize(im.width * im.height * 3);
  in.read(reinterpret_cast<char*>(im.pixels.data()), std::streamsize(im.pixels.size()));
  if (in.gcount() != std::streamsize(im.pixels.size())) throw image_error(path + ": truncated pixel data");
  return im;
}

inline rgb_image flip_horizontal(const rgb_image& im) {
  rgb_image out(im.height, im.width);
  for (std::size_t r = 0; r < im.height; ++r)
    for (std::size_t c = 0; c < im.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(r, im.width - 1 - c, ch) = im.at(r, c, ch);
  return out;
}

inline rgb_image scale_brightness(const rgb_image& im, double factor) {
  rgb_image out = im;
  if (factor == 1.0) return out;
  for (auto& p : out.pixels) p = quantize(p / 255.0 * factor);
  return out;
}

/// Bilinear resize, pixel centers aligned.
inline rgb_image resize_bilinear(const rgb_image& im, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw std::invalid_argument("resize_bilinear: empty target");
  if (h == im.height && w == im.width) return im;
  rgb_image out(h, w);
  const double sy = double(im.height) / h, sx = double(im.width) / w;
  for (std::size_t r = 0; r < h; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, double(im.height - 1));
    const auto y0 = std::size_t(y), y1 = std::min(y0 + 1, im.height - 1);
    const double fy = y - y0;
    for (std::size_t c = 0; c < w; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, double(im.width - 1));
      const auto x0 = std::size_t(x), x1 = std::min(x0 + 1, im.width - 1);
      const double fx = x - x0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double top = im.at(y0, x0, ch) * (1 - fx) + im.at(y0, x1, ch) * fx;
        const double bottom = im.at(y1, x0, ch) * (1 - fx) + im.at(y1, x1, ch) * fx;
        out.at(r, c, ch) = quantize((top * (1 - fy) + bottom * fy) / 255.0);
      }
    }
  }
  return out;
}

}  // namespace gcnet

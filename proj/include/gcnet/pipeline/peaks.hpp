// Peak extraction on confidence maps: cells equal to their 3x3 max-pool
// value. A connected plateau of equal local maxima yields one peak, the
// lexicographically smallest (row, col) cell.
#pragma once

#include <algorithm>
#include <numeric>
#include <tuple>
#include <vector>

#include "gcnet/numerics/ops.hpp"

namespace gcnet {

struct peak {
  std::size_t row = 0, col = 0, cls = 0;
  double score = 0.0;

  bool operator==(const peak&) const = default;
};

/// y: [h, w, n] or [1, h, w, n]. Peaks with score >= threshold, by
/// descending score, then (row, col, class).
template <class T>
std::vector<peak> extract_peaks(const basic_tensor<T>& y, double threshold) {
  if (!(y.rank() == 3 || (y.rank() == 4 && y.dim(0) == 1)))
    throw shape_error("extract_peaks: expected [h, w, n] or [1, h, w, n], got " + shape_string(y.shape()));
  const std::size_t off = y.rank() == 4 ? 1 : 0;
  const std::size_t h = y.dim(off), w = y.dim(off + 1), n = y.dim(off + 2);
  no_grad_guard ng;
  const auto map = reshape(y.detach(), shape_t{1, h, w, n});
  const auto pooled = max_pool2d(map, 3, 1);
  const auto& v = map.values();
  const auto& pv = pooled.values();

  std::vector<peak> out;
  std::vector<std::size_t> parent(h * w);
  for (std::size_t cls = 0; cls < n; ++cls) {
    auto at = [&](std::size_t i, std::size_t j) { return (i * w + j) * n + cls; };
    auto is_max = [&](std::size_t i, std::size_t j) {
      const T x = v[at(i, j)];
      return x == pv[at(i, j)] && double(x) >= threshold;
    };
    // Union-find over 8-connected equal-valued maxima; the root is the
    // smallest flat index, i.e. the smallest (row, col).
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t a) {
      while (parent[a] != a) a = parent[a] = parent[parent[a]];
      return a;
    };
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        if (!is_max(i, j)) continue;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const auto ni = std::ptrdiff_t(i) + di, nj = std::ptrdiff_t(j) + dj;
            if ((di == 0 && dj == 0) || ni < 0 || nj < 0 || ni >= std::ptrdiff_t(h) || nj >= std::ptrdiff_t(w)) continue;
            if (!is_max(ni, nj) || v[at(ni, nj)] != v[at(i, j)]) continue;
            const auto a = find(i * w + j), b = find(ni * w + nj);
            if (a != b) parent[std::max(a, b)] = std::min(a, b);
          }
      }
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        if (is_max(i, j) && find(i * w + j) == i * w + j) out.push_back({i, j, cls, double(v[at(i, j)])});
  }
  std::sort(out.begin(), out.end(), [](const peak& a, const peak& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.row, a.col, a.cls) < std::tie(b.row, b.col, b.cls);
  });
  return out;
}

}  // namespace gcnet

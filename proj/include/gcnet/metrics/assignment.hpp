#pragma once

#include <algorithm>
#include <limits>
#include <utility>
#include <vector>

namespace gcnet {

/// Maximum-weight assignment on a rows x cols weight table (row-major) via
/// the Hungarian method. Pairs with weight <= 0 are never reported.
inline std::vector<std::pair<std::size_t, std::size_t>> max_weight_assignment(const std::vector<double>& weight,
                                                                             std::size_t rows, std::size_t cols) {
  const std::size_t n = std::max(rows, cols);
  if (n == 0) return {};
  auto cost = [&](std::size_t i, std::size_t j) {  // 1-based, padded
    return (i <= rows && j <= cols) ? -weight[(i - 1) * cols + (j - 1)] : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j])
          u[p[j]] += delta, v[j] -= delta;
        else
          minv[j] -= delta;
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i >= 1 && i <= rows && j <= cols && weight[(i - 1) * cols + (j - 1)] > 0) out.emplace_back(i - 1, j - 1);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace gcnet

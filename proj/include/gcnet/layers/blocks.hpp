// Building blocks of the correlation head: position embedding, confidence
// gate and the global correlation layer.
#pragma once

#include <cmath>
#include <numbers>

#include "gcnet/layers/config.hpp"
#include "gcnet/numerics/ops.hpp"

namespace gcnet {

/// Fixed position code of shape [rows, cols, channels].
///
/// cosine:   P[i,j,k] = cos(4*pi*k/c + pi*i/rows) for k < c/2,
///           cos(4*pi*k/c + pi*j/cols) otherwise.
/// explicit: P[i,j,k] = i for k < c/2, j otherwise.
template <class T>
basic_tensor<T> position_embedding(std::size_t rows, std::size_t cols, std::size_t channels,
                                   position_embedding_kind kind = position_embedding_kind::cosine) {
  if (channels == 0 || channels % 2) throw config_error("position_embedding: channel count must be even");
  if (rows == 0 || cols == 0) throw config_error("position_embedding: empty grid");
  const double pi = std::numbers::pi;
  std::vector<T> p(rows * cols * channels);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t k = 0; k < channels; ++k) {
        const bool row_part = k < channels / 2;
        double v;
        if (kind == position_embedding_kind::cosine) {
          const double phase = row_part ? pi * double(i) / double(rows) : pi * double(j) / double(cols);
          v = std::cos(4.0 * pi * double(k) / double(channels) + phase);
        } else {
          v = row_part ? double(i) : double(j);
        }
        p[(i * cols + j) * channels + k] = static_cast<T>(v);
      }
  return basic_tensor<T>(shape_t{rows, cols, channels}, std::move(p));
}

/// Spatial attention: every channel of x [n, h, w, c] scaled by y [n, h, w, 1].
template <class T>
basic_tensor<T> gate(const basic_tensor<T>& x, const basic_tensor<T>& y) {
  detail::require(x.rank() == 4 && y.rank() == 4 && y.dim(3) == 1 && x.dim(0) == y.dim(0) && x.dim(1) == y.dim(1) &&
                      x.dim(2) == y.dim(2),
                  "gate: attention " + shape_string(y.shape()) + " does not match values " + shape_string(x.shape()));
  const std::size_t c = x.dim(3), positions = y.size();
  const auto& xv = x.values();
  const auto& yv = y.values();
  std::vector<T> out(x.size());
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t k = 0; k < c; ++k) out[p * c + k] = xv[p * c + k] * yv[p];
  return detail::make_result<T>("gate", x.shape(), std::move(out), {x, y}, [c, positions](detail::node<T>& self) {
    const auto& xv = self.parents[0]->value;
    const auto& yv = self.parents[1]->value;
    T* gx = detail::grad_sink(self, 0);
    T* gy = detail::grad_sink(self, 1);
    for (std::size_t p = 0; p < positions; ++p)
      for (std::size_t k = 0; k < c; ++k) {
        const T g = self.grad[p * c + k];
        if (gx) gx[p * c + k] += g * yv[p];
        if (gy) gy[p] += g * xv[p * c + k];
      }
  });
}

/// Single-channel attention from a class confidence map [n, h, w, classes]:
/// the per-position maximum over classes.
template <class T>
basic_tensor<T> gate_attention(const basic_tensor<T>& confidence) {
  return confidence.dim(3) == 1 ? confidence : max_last(confidence);
}

/// Cosine-similarity maps of every query position against every key position.
/// q, k: [n, h, w, c] -> [n, h*w, h*w]; entry (b, p, s) = cos(q[b,p], k[b,s]).
template <class T>
basic_tensor<T> similarity_maps(const basic_tensor<T>& q, const basic_tensor<T>& k) {
  detail::require(q.rank() == 4 && q.shape() == k.shape(),
                  "global_correlation: Q " + shape_string(q.shape()) + " and K " + shape_string(k.shape()) +
                      " must have the same [n, h, w, c] shape");
  const std::size_t n = q.dim(0), hw = q.dim(1) * q.dim(2), c = q.dim(3);
  auto qn = l2_normalize(reshape(q, shape_t{n, hw, c}));
  auto kn = l2_normalize(reshape(k, shape_t{n, hw, c}));
  return bmm_nt(qn, kn);
}

/// Correlation vectors C = W * flatten(similarity map) for every position.
/// weight: [c', h*w]. Result: [n, h*w, c'].
template <class T>
basic_tensor<T> global_correlation(const basic_tensor<T>& q, const basic_tensor<T>& k, const basic_tensor<T>& weight) {
  const std::size_t hw = q.dim(1) * q.dim(2);
  detail::require(weight.rank() == 2 && weight.dim(1) == hw,
                  "global_correlation: W " + shape_string(weight.shape()) + " expects " +
                      std::to_string(weight.dim(1)) + " positions, maps have " + std::to_string(hw));
  return linear(similarity_maps(q, k), weight);
}

/// Query-sparse variant: queries [m, c] against pre-normalized keys
/// [h*w, c]. Cost is O(m * h*w * (c + c')).
template <class T>
basic_tensor<T> sparse_correlation(const basic_tensor<T>& queries, const basic_tensor<T>& normalized_keys,
                                   const basic_tensor<T>& weight) {
  detail::require(queries.rank() == 2 && normalized_keys.rank() == 2 && queries.dim(1) == normalized_keys.dim(1),
                  "sparse_correlation: queries " + shape_string(queries.shape()) + " vs keys " +
                      shape_string(normalized_keys.shape()));
  auto sim = linear(l2_normalize(queries), normalized_keys);
  return linear(sim, weight);
}

}  // namespace gcnet

// Differentiable primitives over basic_tensor.
//
// Feature maps are channel-last: [batch, rows, cols, channels]. Dense kernels
// go through Eigen; everything else is plain loops so that results are
// bitwise reproducible on a single thread.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <numbers>

#include "gcnet/numerics/tensor.hpp"

namespace gcnet {

namespace detail {

template <class T>
using row_matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using matrix_map = Eigen::Map<row_matrix<T>>;
template <class T>
using const_matrix_map = Eigen::Map<const row_matrix<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw shape_error(what);
}

// True when `small` equals the trailing dimensions of `big`.
inline bool is_suffix(const shape_t& small, const shape_t& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <class T, class F, class DF>
basic_tensor<T> unary(const char* op, const basic_tensor<T>& a, F f, DF df) {
  const auto& x = a.values();
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result<T>(op, a.shape(), std::move(y), {a}, [df](node<T>& self) {
    T* ga = grad_sink(self, 0);
    if (!ga) return;
    const auto& xv = self.parents[0]->value;
    for (std::size_t i = 0; i < xv.size(); ++i) ga[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

// Elementwise binary op with suffix broadcasting: the operand with fewer
// elements is tiled along the leading axes of the other.
template <class T, class F, class DA, class DB>
basic_tensor<T> binary(const char* op, const basic_tensor<T>& a, const basic_tensor<T>& b, F f, DA da,
                       DB db) {
  const bool a_big = a.size() >= b.size();
  const auto& big = a_big ? a.shape() : b.shape();
  const auto& small = a_big ? b.shape() : a.shape();
  require(b.size() == 1 || a.size() == 1 || is_suffix(small, big),
          std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
              shape_string(b.shape()));
  const std::size_t n = std::max(a.size(), b.size());
  const std::size_t na = a.size(), nb = b.size();
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = f(av[i % na], bv[i % nb]);
  return make_result<T>(op, big, std::move(y), {a, b}, [da, db, na, nb](node<T>& self) {
    const auto& x = self.parents[0]->value;
    const auto& z = self.parents[1]->value;
    T* ga = grad_sink(self, 0);
    T* gb = grad_sink(self, 1);
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const T g = self.grad[i];
      const T xa = x[i % na], xb = z[i % nb];
      if (ga) ga[i % na] += g * da(xa, xb);
      if (gb) gb[i % nb] += g * db(xa, xb);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
basic_tensor<T> add(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <class T>
basic_tensor<T> sub(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <class T>
basic_tensor<T> mul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <class T>
basic_tensor<T> div(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

// Ties send the whole gradient to the first operand.
template <class T>
basic_tensor<T> minimum(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return detail::binary<T>(
      "minimum", a, b, [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y) { return x <= y ? T(1) : T(0); }, [](T x, T y) { return x <= y ? T(0) : T(1); });
}

template <class T>
basic_tensor<T> maximum(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  return detail::binary<T>(
      "maximum", a, b, [](T x, T y) { return x >= y ? x : y; },
      [](T x, T y) { return x >= y ? T(1) : T(0); }, [](T x, T y) { return x >= y ? T(0) : T(1); });
}

template <class T>
basic_tensor<T> scale(const basic_tensor<T>& a, T s) {
  return detail::unary<T>("scale", a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
basic_tensor<T> add_scalar(const basic_tensor<T>& a, T s) {
  return detail::unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
basic_tensor<T> neg(const basic_tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
basic_tensor<T> sigmoid(const basic_tensor<T>& a) {
  return detail::unary<T>(
      "sigmoid", a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
basic_tensor<T> relu(const basic_tensor<T>& a) {
  return detail::unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
basic_tensor<T> softplus(const basic_tensor<T>& a) {
  return detail::unary<T>(
      "softplus", a,
      [](T x) { return x > T(20) ? x : std::log1p(std::exp(x)); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

template <class T>
basic_tensor<T> log(const basic_tensor<T>& a) {
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
basic_tensor<T> exp(const basic_tensor<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
basic_tensor<T> atan(const basic_tensor<T>& a) {
  return detail::unary<T>(
      "atan", a, [](T x) { return std::atan(x); }, [](T x, T) { return T(1) / (T(1) + x * x); });
}

template <class T>
basic_tensor<T> sqrt(const basic_tensor<T>& a) {
  return detail::unary<T>(
      "sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
basic_tensor<T> square(const basic_tensor<T>& a) {
  return detail::unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
template <class T>
basic_tensor<T> clamp(const basic_tensor<T>& a, T lo, T hi) {
  return detail::unary<T>(
      "clamp", a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions and shape manipulation

template <class T>
basic_tensor<T> sum(const basic_tensor<T>& a) {
  T s = 0;
  for (T v : a.values()) s += v;
  return detail::make_result<T>("sum", shape_t{}, std::vector<T>{s}, {a}, [](detail::node<T>& self) {
    T* ga = detail::grad_sink(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) ga[i] += self.grad[0];
  });
}

template <class T>
basic_tensor<T> mean(const basic_tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Sum over the last axis: [..., c] -> [...].
template <class T>
basic_tensor<T> sum_last(const basic_tensor<T>& a) {
  detail::require(a.rank() >= 1, "sum_last: rank-0 input");
  const std::size_t c = a.shape().back();
  const std::size_t rows = c ? a.size() / c : 0;
  shape_t out(a.shape().begin(), a.shape().end() - 1);
  std::vector<T> y(rows, T(0));
  const auto& x = a.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < c; ++k) y[r] += x[r * c + k];
  return detail::make_result<T>("sum_last", out, std::move(y), {a}, [c](detail::node<T>& self) {
    T* ga = detail::grad_sink(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < self.value.size(); ++r)
      for (std::size_t k = 0; k < c; ++k) ga[r * c + k] += self.grad[r];
  });
}

/// Max over the last axis keeping it as size 1: [..., c] -> [..., 1].
template <class T>
basic_tensor<T> max_last(const basic_tensor<T>& a) {
  const std::size_t c = a.shape().back();
  detail::require(c > 0, "max_last: empty channel axis");
  const std::size_t rows = a.size() / c;
  shape_t out = a.shape();
  out.back() = 1;
  std::vector<T> y(rows);
  std::vector<std::size_t> arg(rows);
  const auto& x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (x[r * c + k] > x[r * c + best]) best = k;
    arg[r] = r * c + best;
    y[r] = x[arg[r]];
  }
  return detail::make_result<T>("max_last", out, std::move(y), {a},
                                [arg = std::move(arg)](detail::node<T>& self) {
                                  T* ga = detail::grad_sink(self, 0);
                                  if (!ga) return;
                                  for (std::size_t r = 0; r < arg.size(); ++r) ga[arg[r]] += self.grad[r];
                                });
}

template <class T>
basic_tensor<T> reshape(const basic_tensor<T>& a, shape_t shape) {
  detail::require(element_count(shape) == a.size(),
                  "reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  return detail::make_result<T>("reshape", std::move(shape), a.values(), {a}, [](detail::node<T>& self) {
    T* ga = detail::grad_sink(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

/// Collapses everything but the last axis: [..., c] -> [prod(...), c].
template <class T>
basic_tensor<T> flatten(const basic_tensor<T>& a) {
  const std::size_t c = a.rank() ? a.shape().back() : 1;
  return reshape(a, shape_t{c ? a.size() / c : 0, c});
}

/// Concatenation along the last axis; all leading dims must agree.
template <class T>
basic_tensor<T> concat_last(const std::vector<basic_tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat_last: no inputs");
  shape_t lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  const std::size_t rows = element_count(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    shape_t pl(p.shape().begin(), p.shape().end() - 1);
    detail::require(pl == lead, "concat_last: leading shapes differ: " + shape_string(parts[0].shape()) +
                                    " vs " + shape_string(p.shape()));
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  std::vector<T> y(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& x = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.begin() + r * widths[k], widths[k], y.begin() + r * total + offset);
    offset += widths[k];
  }
  shape_t out = lead;
  out.push_back(total);
  return detail::make_result<T>("concat_last", out, std::move(y), parts,
                                [widths, rows, total](detail::node<T>& self) {
                                  std::size_t off = 0;
                                  for (std::size_t k = 0; k < widths.size(); ++k) {
                                    if (T* g = detail::grad_sink(self, k))
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t j = 0; j < widths[k]; ++j)
                                          g[r * widths[k] + j] += self.grad[r * total + off + j];
                                    off += widths[k];
                                  }
                                });
}

/// Columns [start, start+len) of the last axis.
template <class T>
basic_tensor<T> slice_last(const basic_tensor<T>& a, std::size_t start, std::size_t len) {
  const std::size_t c = a.shape().back();
  detail::require(start + len <= c, "slice_last: range exceeds " + shape_string(a.shape()));
  const std::size_t rows = a.size() / c;
  shape_t out = a.shape();
  out.back() = len;
  std::vector<T> y(rows * len);
  const auto& x = a.values();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.begin() + r * c + start, len, y.begin() + r * len);
  return detail::make_result<T>("slice_last", out, std::move(y), {a}, [c, start, len, rows](detail::node<T>& self) {
    T* ga = detail::grad_sink(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) ga[r * c + start + j] += self.grad[r * len + j];
  });
}

/// Entries [start, start+len) of the first axis.
template <class T>
basic_tensor<T> slice_first(const basic_tensor<T>& a, std::size_t start, std::size_t len) {
  const std::size_t n = a.shape().front();
  detail::require(start + len <= n, "slice_first: range exceeds " + shape_string(a.shape()));
  const std::size_t inner = n ? a.size() / n : 0;
  shape_t out = a.shape();
  out.front() = len;
  std::vector<T> y(a.values().begin() + start * inner, a.values().begin() + (start + len) * inner);
  return detail::make_result<T>("slice_first", out, std::move(y), {a}, [start, inner](detail::node<T>& self) {
    T* ga = detail::grad_sink(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[start * inner + i] += self.grad[i];
  });
}

/// Rows of a [m, c] tensor picked by index: out[k] = a[index[k]].
template <class T>
basic_tensor<T> gather_rows(const basic_tensor<T>& a, const std::vector<std::size_t>& index) {
  detail::require(a.rank() == 2, "gather_rows: expected [m, c], got " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), c = a.dim(1);
  std::vector<T> y(index.size() * c);
  for (std::size_t k = 0; k < index.size(); ++k) {
    detail::require(index[k] < m, "gather_rows: index out of range");
    std::copy_n(a.values().begin() + index[k] * c, c, y.begin() + k * c);
  }
  return detail::make_result<T>("gather_rows", shape_t{index.size(), c}, std::move(y), {a},
                                [index, c](detail::node<T>& self) {
                                  T* ga = detail::grad_sink(self, 0);
                                  if (!ga) return;
                                  for (std::size_t k = 0; k < index.size(); ++k)
                                    for (std::size_t j = 0; j < c; ++j) ga[index[k] * c + j] += self.grad[k * c + j];
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m, k] x [k, n] -> [m, n].
template <class T>
basic_tensor<T> matmul(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
             n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> y(static_cast<std::size_t>(m * n));
  detail::matrix_map<T>(y.data(), m, n).noalias() =
      detail::const_matrix_map<T>(a.values().data(), m, k) * detail::const_matrix_map<T>(b.values().data(), k, n);
  op_counter::add(static_cast<std::uint64_t>(m * n * k));
  return detail::make_result<T>("matmul", shape_t{a.dim(0), b.dim(1)}, std::move(y), {a, b},
                                [m, k, n](detail::node<T>& self) {
                                  detail::const_matrix_map<T> g(self.grad.data(), m, n);
                                  if (T* ga = detail::grad_sink(self, 0))
                                    detail::matrix_map<T>(ga, m, k).noalias() +=
                                        g * detail::const_matrix_map<T>(self.parents[1]->value.data(), k, n).transpose();
                                  if (T* gb = detail::grad_sink(self, 1))
                                    detail::matrix_map<T>(gb, k, n).noalias() +=
                                        detail::const_matrix_map<T>(self.parents[0]->value.data(), m, k).transpose() * g;
                                });
}

/// Batched a * b^T: [B, m, k] x [B, n, k] -> [B, m, n].
template <class T>
basic_tensor<T> bmm_nt(const basic_tensor<T>& a, const basic_tensor<T>& b) {
  detail::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
                  "bmm_nt: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  const std::size_t batch = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1)), k = static_cast<Eigen::Index>(a.dim(2)),
             n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> y(batch * static_cast<std::size_t>(m * n));
  for (std::size_t s = 0; s < batch; ++s)
    detail::matrix_map<T>(y.data() + s * m * n, m, n).noalias() =
        detail::const_matrix_map<T>(a.values().data() + s * m * k, m, k) *
        detail::const_matrix_map<T>(b.values().data() + s * n * k, n, k).transpose();
  op_counter::add(static_cast<std::uint64_t>(batch * m * n * k));
  return detail::make_result<T>(
      "bmm_nt", shape_t{batch, a.dim(1), b.dim(1)}, std::move(y), {a, b}, [batch, m, k, n](detail::node<T>& self) {
        T* ga = detail::grad_sink(self, 0);
        T* gb = detail::grad_sink(self, 1);
        for (std::size_t s = 0; s < batch; ++s) {
          detail::const_matrix_map<T> g(self.grad.data() + s * m * n, m, n);
          if (ga)
            detail::matrix_map<T>(ga + s * m * k, m, k).noalias() +=
                g * detail::const_matrix_map<T>(self.parents[1]->value.data() + s * n * k, n, k);
          if (gb)
            detail::matrix_map<T>(gb + s * n * k, n, k).noalias() +=
                g.transpose() * detail::const_matrix_map<T>(self.parents[0]->value.data() + s * m * k, m, k);
        }
      });
}

/// Fully-connected layer over the last axis: y = x W^T + bias, W is [out, in].
/// `bias` may be undefined.
template <class T>
basic_tensor<T> linear(const basic_tensor<T>& x, const basic_tensor<T>& weight, const basic_tensor<T>& bias = {}) {
  detail::require(weight.rank() == 2 && x.rank() >= 1 && x.shape().back() == weight.dim(1),
                  "linear: input " + shape_string(x.shape()) + " does not match weight " +
                      shape_string(weight.shape()));
  const std::size_t in = weight.dim(1), out = weight.dim(0);
  const auto rows = static_cast<Eigen::Index>(x.size() / in);
  const auto ei = static_cast<Eigen::Index>(in), eo = static_cast<Eigen::Index>(out);
  std::vector<T> y(static_cast<std::size_t>(rows) * out);
  detail::matrix_map<T> ym(y.data(), rows, eo);
  ym.noalias() = detail::const_matrix_map<T>(x.values().data(), rows, ei) *
                 detail::const_matrix_map<T>(weight.values().data(), eo, ei).transpose();
  if (bias.defined()) {
    detail::require(bias.size() == out, "linear: bias length must equal output width");
    for (Eigen::Index r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out; ++j) y[r * out + j] += bias[j];
  }
  op_counter::add(static_cast<std::uint64_t>(rows) * in * out);
  shape_t oshape = x.shape();
  oshape.back() = out;
  std::vector<basic_tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::make_result<T>("linear", oshape, std::move(y), inputs, [rows, ei, eo](detail::node<T>& self) {
    detail::const_matrix_map<T> g(self.grad.data(), rows, eo);
    if (T* gx = detail::grad_sink(self, 0))
      detail::matrix_map<T>(gx, rows, ei).noalias() +=
          g * detail::const_matrix_map<T>(self.parents[1]->value.data(), eo, ei);
    if (T* gw = detail::grad_sink(self, 1))
      detail::matrix_map<T>(gw, eo, ei).noalias() +=
          g.transpose() * detail::const_matrix_map<T>(self.parents[0]->value.data(), rows, ei);
    if (self.parents.size() > 2)
      if (T* gb = detail::grad_sink(self, 2))
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index j = 0; j < eo; ++j) gb[j] += g(r, j);
  });
}

/// Rows scaled to unit length along the last axis; norms are clamped below by
/// `eps` so zero rows map to zero instead of NaN.
template <class T>
basic_tensor<T> l2_normalize(const basic_tensor<T>& a, T eps = T(1e-12)) {
  const std::size_t c = a.shape().back();
  const std::size_t rows = c ? a.size() / c : 0;
  const auto& x = a.values();
  std::vector<T> y(a.size());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t k = 0; k < c; ++k) s += x[r * c + k] * x[r * c + k];
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t k = 0; k < c; ++k) y[r * c + k] = x[r * c + k] / norms[r];
  }
  return detail::make_result<T>("l2_normalize", a.shape(), std::move(y), {a},
                                [c, eps, norms = std::move(norms)](detail::node<T>& self) {
                                  T* ga = detail::grad_sink(self, 0);
                                  if (!ga) return;
                                  for (std::size_t r = 0; r < norms.size(); ++r) {
                                    const T* g = self.grad.data() + r * c;
                                    const T* y = self.value.data() + r * c;
                                    if (norms[r] > eps) {
                                      T dot = 0;
                                      for (std::size_t k = 0; k < c; ++k) dot += y[k] * g[k];
                                      for (std::size_t k = 0; k < c; ++k) ga[r * c + k] += (g[k] - y[k] * dot) / norms[r];
                                    } else {
                                      for (std::size_t k = 0; k < c; ++k) ga[r * c + k] += g[k] / eps;
                                    }
                                  }
                                });
}

/// Row-wise cosine similarity along the last axis: [..., c] x [..., c] -> [...].
template <class T>
basic_tensor<T> cosine_similarity(const basic_tensor<T>& a, const basic_tensor<T>& b, T eps = T(1e-12)) {
  detail::require(a.shape() == b.shape(), "cosine_similarity: shapes differ: " + shape_string(a.shape()) +
                                              " vs " + shape_string(b.shape()));
  return sum_last(mul(l2_normalize(a, eps), l2_normalize(b, eps)));
}

// ---------------------------------------------------------------------------
// Convolution, pooling, resampling

enum class padding { same, valid };

namespace detail {

struct conv_geometry {
  std::size_t n, h, w, cin, k, cout, stride, oh, ow;
  std::ptrdiff_t pad_top, pad_left;
};

inline conv_geometry make_conv_geometry(const shape_t& in, const shape_t& ker, std::size_t stride, padding pad) {
  require(in.size() == 4, "conv2d: input must be [n, h, w, c], got " + shape_string(in));
  require(ker.size() == 4 && ker[0] == ker[1], "conv2d: kernel must be [k, k, cin, cout], got " + shape_string(ker));
  require(ker[0] % 2 == 1, "conv2d: kernel size must be odd");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(in[3] == ker[2], "conv2d: input has " + std::to_string(in[3]) + " channels but kernel expects " +
                               std::to_string(ker[2]));
  conv_geometry g{in[0], in[1], in[2], in[3], ker[0], ker[3], stride, 0, 0, 0, 0};
  if (pad == padding::same) {
    g.oh = (g.h + stride - 1) / stride;
    g.ow = (g.w + stride - 1) / stride;
    const auto ph = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>((g.oh - 1) * stride + g.k) - g.h, 0);
    const auto pw = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>((g.ow - 1) * stride + g.k) - g.w, 0);
    g.pad_top = ph / 2;
    g.pad_left = pw / 2;
  } else {
    require(g.h >= g.k && g.w >= g.k, "conv2d: valid padding needs input at least kernel size");
    g.oh = (g.h - g.k) / stride + 1;
    g.ow = (g.w - g.k) / stride + 1;
  }
  return g;
}

template <class T>
void im2col(const conv_geometry& g, const T* x, T* cols) {
  const std::size_t patch = g.k * g.k * g.cin;
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        T* dst = cols + ((b * g.oh + oy) * g.ow + ox) * patch;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
          for (std::size_t kx = 0; kx < g.k; ++kx, dst += g.cin) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w))
              std::fill_n(dst, g.cin, T(0));
            else
              std::copy_n(x + ((b * g.h + iy) * g.w + ix) * g.cin, g.cin, dst);
          }
        }
      }
}

template <class T>
void col2im(const conv_geometry& g, const T* cols, T* dx) {
  const std::size_t patch = g.k * g.k * g.cin;
  for (std::size_t b = 0; b < g.n; ++b)
    for (std::size_t oy = 0; oy < g.oh; ++oy)
      for (std::size_t ox = 0; ox < g.ow; ++ox) {
        const T* src = cols + ((b * g.oh + oy) * g.ow + ox) * patch;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - g.pad_top;
          for (std::size_t kx = 0; kx < g.k; ++kx, src += g.cin) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - g.pad_left;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w))
              continue;
            T* d = dx + ((b * g.h + iy) * g.w + ix) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) d[c] += src[c];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution (cross-correlation). input [n, h, w, cin], kernel
/// [k, k, cin, cout]; "same" padding gives ceil(dim / stride) outputs.
template <class T>
basic_tensor<T> conv2d(const basic_tensor<T>& input, const basic_tensor<T>& kernel, std::size_t stride = 1,
                       padding pad = padding::same) {
  const auto g = detail::make_conv_geometry(input.shape(), kernel.shape(), stride, pad);
  const auto rows = static_cast<Eigen::Index>(g.n * g.oh * g.ow);
  const auto patch = static_cast<Eigen::Index>(g.k * g.k * g.cin);
  const auto co = static_cast<Eigen::Index>(g.cout);
  std::vector<T> cols(static_cast<std::size_t>(rows * patch));
  detail::im2col(g, input.values().data(), cols.data());
  std::vector<T> y(static_cast<std::size_t>(rows * co));
  detail::matrix_map<T>(y.data(), rows, co).noalias() =
      detail::const_matrix_map<T>(cols.data(), rows, patch) *
      detail::const_matrix_map<T>(kernel.values().data(), patch, co);
  op_counter::add(static_cast<std::uint64_t>(rows * patch * co));
  const bool record = grad_enabled() && (input.requires_grad() || kernel.requires_grad());
  if (!record) cols = {};
  return detail::make_result<T>(
      "conv2d", shape_t{g.n, g.oh, g.ow, g.cout}, std::move(y), {input, kernel},
      [g, rows, patch, co, cols = std::move(cols)](detail::node<T>& self) {
        detail::const_matrix_map<T> gy(self.grad.data(), rows, co);
        if (T* gk = detail::grad_sink(self, 1))
          detail::matrix_map<T>(gk, patch, co).noalias() +=
              detail::const_matrix_map<T>(cols.data(), rows, patch).transpose() * gy;
        if (T* gx = detail::grad_sink(self, 0)) {
          std::vector<T> dcols(static_cast<std::size_t>(rows * patch));
          detail::matrix_map<T>(dcols.data(), rows, patch).noalias() =
              gy * detail::const_matrix_map<T>(self.parents[1]->value.data(), patch, co).transpose();
          detail::col2im(g, dcols.data(), gx);
        }
      });
}

/// Max pooling with window k, stride s and same padding (padding never wins).
/// Gradient goes to the first maximal element in each window.
template <class T>
basic_tensor<T> max_pool2d(const basic_tensor<T>& input, std::size_t k, std::size_t stride) {
  detail::require(input.rank() == 4, "max_pool2d: input must be [n, h, w, c]");
  detail::require(k >= 1 && stride >= 1, "max_pool2d: kernel and stride must be positive");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  const auto pad_top = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>((oh - 1) * stride + k) - h, 0) / 2;
  const auto pad_left = std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>((ow - 1) * stride + k) - w, 0) / 2;
  const auto& x = input.values();
  std::vector<T> y(n * oh * ow * c);
  std::vector<std::size_t> arg(y.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ch = 0; ch < c; ++ch) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = 0;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad_top;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad_left;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t idx = ((b * h + iy) * w + ix) * c + ch;
              if (x[idx] > best) {
                best = x[idx];
                best_i = idx;
              }
            }
          }
          const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
          y[o] = best;
          arg[o] = best_i;
        }
  return detail::make_result<T>("max_pool2d", shape_t{n, oh, ow, c}, std::move(y), {input},
                                [arg = std::move(arg)](detail::node<T>& self) {
                                  T* ga = detail::grad_sink(self, 0);
                                  if (!ga) return;
                                  for (std::size_t i = 0; i < arg.size(); ++i) ga[arg[i]] += self.grad[i];
                                });
}

/// Nearest-neighbour 2x upsampling cropped to (out_h, out_w).
template <class T>
basic_tensor<T> upsample2x(const basic_tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  detail::require(input.rank() == 4, "upsample2x: input must be [n, h, w, c]");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  detail::require(out_h <= 2 * h && out_w <= 2 * w, "upsample2x: target larger than twice the input");
  std::vector<std::size_t> src(n * out_h * out_w);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) src[(b * out_h + i) * out_w + j] = (b * h + i / 2) * w + j / 2;
  std::vector<T> y(src.size() * c);
  const auto& x = input.values();
  for (std::size_t p = 0; p < src.size(); ++p) std::copy_n(x.begin() + src[p] * c, c, y.begin() + p * c);
  return detail::make_result<T>("upsample2x", shape_t{n, out_h, out_w, c}, std::move(y), {input},
                                [src = std::move(src), c](detail::node<T>& self) {
                                  T* ga = detail::grad_sink(self, 0);
                                  if (!ga) return;
                                  for (std::size_t p = 0; p < src.size(); ++p)
                                    for (std::size_t k = 0; k < c; ++k) ga[src[p] * c + k] += self.grad[p * c + k];
                                });
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Running statistics owned by a batch-norm layer.
template <class T>
struct batch_norm_state {
  std::vector<T> mean;
  std::vector<T> var;
  explicit batch_norm_state(std::size_t channels = 0) : mean(channels, T(0)), var(channels, T(1)) {}
};

enum class norm_mode {
  train,  // batch statistics, running statistics updated
  eval    // running statistics
};

/// Per-channel normalization over every axis but the last.
///
/// Train mode uses the biased batch variance and updates
/// running = momentum * running + (1 - momentum) * batch. A constant channel
/// normalizes to 0, so its output equals beta.
template <class T>
basic_tensor<T> batch_norm(const basic_tensor<T>& input, const basic_tensor<T>& gamma, const basic_tensor<T>& beta,
                           batch_norm_state<T>& state, norm_mode mode, T momentum = T(0.9), T eps = T(1e-5)) {
  if (!(eps > T(0))) throw std::invalid_argument("batch_norm: eps must be positive");
  const std::size_t c = input.shape().back();
  detail::require(gamma.size() == c && beta.size() == c,
                  "batch_norm: gamma/beta length must equal channel count " + std::to_string(c));
  detail::require(state.mean.size() == c && state.var.size() == c, "batch_norm: running statistics size mismatch");
  const std::size_t m = input.size() / c;
  const auto& x = input.values();
  std::vector<T> mu(c, T(0)), var(c, T(0));
  if (mode == norm_mode::train) {
    detail::require(m > 0, "batch_norm: empty batch in train mode");
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t k = 0; k < c; ++k) mu[k] += x[r * c + k];
    for (auto& v : mu) v /= static_cast<T>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t k = 0; k < c; ++k) {
        const T d = x[r * c + k] - mu[k];
        var[k] += d * d;
      }
    for (auto& v : var) v /= static_cast<T>(m);
    for (std::size_t k = 0; k < c; ++k) {
      state.mean[k] = momentum * state.mean[k] + (T(1) - momentum) * mu[k];
      state.var[k] = momentum * state.var[k] + (T(1) - momentum) * var[k];
    }
  } else {
    mu = state.mean;
    var = state.var;
  }
  std::vector<T> inv_std(c);
  for (std::size_t k = 0; k < c; ++k) inv_std[k] = T(1) / std::sqrt(var[k] + eps);
  std::vector<T> xhat(x.size()), y(x.size());
  const auto& gm = gamma.values();
  const auto& bt = beta.values();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t i = r * c + k;
      xhat[i] = (x[i] - mu[k]) * inv_std[k];
      y[i] = gm[k] * xhat[i] + bt[k];
    }
  const bool batch_stats = mode == norm_mode::train;
  return detail::make_result<T>(
      "batch_norm", input.shape(), std::move(y), {input, gamma, beta},
      [c, m, batch_stats, inv_std = std::move(inv_std), xhat = std::move(xhat)](detail::node<T>& self) {
        const auto& g = self.grad;
        const auto& gm = self.parents[1]->value;
        std::vector<T> sum_g(c, T(0)), sum_gx(c, T(0));
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t k = 0; k < c; ++k) {
            sum_g[k] += g[r * c + k];
            sum_gx[k] += g[r * c + k] * xhat[r * c + k];
          }
        if (T* gg = detail::grad_sink(self, 1))
          for (std::size_t k = 0; k < c; ++k) gg[k] += sum_gx[k];
        if (T* gb = detail::grad_sink(self, 2))
          for (std::size_t k = 0; k < c; ++k) gb[k] += sum_g[k];
        if (T* gx = detail::grad_sink(self, 0)) {
          const T inv_m = T(1) / static_cast<T>(m);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t k = 0; k < c; ++k) {
              const std::size_t i = r * c + k;
              if (batch_stats)
                gx[i] += gm[k] * inv_std[k] * (g[i] - inv_m * sum_g[k] - xhat[i] * inv_m * sum_gx[k]);
              else
                gx[i] += gm[k] * inv_std[k] * g[i];
            }
        }
      });
}

}  // namespace gcnet

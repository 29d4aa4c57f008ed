// Central finite-difference oracle for the reverse-mode gradients.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gcnet/numerics/tensor.hpp"

namespace gcnet {

struct gradcheck_report {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool finite = true;
  bool passed = false;
  std::string message;
};

struct gradcheck_options {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
};

namespace detail {

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace detail

/// Compares the gradient of scalar f at x against central differences over
/// every element of x.
inline gradcheck_report finite_difference_check(const std::function<tensor(const tensor&)>& f, const tensor& x,
                                                gradcheck_options opt = {}) {
  gradcheck_report rep;
  tensor probe = x.detach();
  probe.set_requires_grad(true);
  const tensor y = f(probe);
  if (y.size() != 1) throw shape_error("finite_difference_check: f must be scalar-valued");
  if (!std::isfinite(y.item())) {
    rep.finite = false;
    rep.message = "f(x) is not finite";
    return rep;
  }
  backward(y);
  std::vector<double> analytic(probe.size(), 0.0);
  if (probe.has_grad()) std::copy(probe.grad().begin(), probe.grad().end(), analytic.begin());

  for (std::size_t i = 0; i < x.size(); ++i) {
    tensor plus = x.detach(), minus = x.detach();
    plus.mutable_data()[i] += opt.step;
    minus.mutable_data()[i] -= opt.step;
    double fp, fm;
    {
      no_grad_guard ng;
      fp = f(plus).item();
      fm = f(minus).item();
    }
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      rep.finite = false;
      rep.worst_index = i;
      rep.message = "non-finite value at perturbed element " + std::to_string(i);
      return rep;
    }
    const double numeric = (fp - fm) / (2.0 * opt.step);
    const double rel = detail::relative_error(analytic[i], numeric, opt.floor);
    rep.max_absolute_error = std::max(rep.max_absolute_error, std::abs(analytic[i] - numeric));
    if (rel > rep.max_relative_error) {
      rep.max_relative_error = rel;
      rep.worst_index = i;
    }
    ++rep.checked;
  }
  rep.passed = rep.finite && rep.max_relative_error < opt.tolerance;
  if (!rep.passed && rep.message.empty())
    rep.message = "max relative error " + std::to_string(rep.max_relative_error) + " at element " +
                  std::to_string(rep.worst_index);
  return rep;
}

/// Same check over entries of several parameter tensors. `loss` must read
/// the parameters through the handles it captured; entries are perturbed in
/// place and restored. When `samples_per_tensor` is nonzero only that many
/// randomly chosen entries of each tensor are probed.
inline gradcheck_report parameter_gradient_check(const std::function<tensor()>& loss, std::vector<tensor> params,
                                                 gradcheck_options opt = {}, std::size_t samples_per_tensor = 0,
                                                 std::uint64_t seed = 7) {
  gradcheck_report rep;
  for (auto& p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  const tensor y = loss();
  if (!std::isfinite(y.item())) {
    rep.finite = false;
    rep.message = "loss is not finite";
    return rep;
  }
  backward(y);
  std::mt19937_64 rng(seed);
  std::size_t flat_offset = 0;
  for (auto& p : params) {
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (samples_per_tensor && samples_per_tensor < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(samples_per_tensor);
    }
    for (std::size_t i : idx) {
      auto v = p.mutable_data();
      const double saved = v[i];
      double fp, fm;
      {
        no_grad_guard ng;
        v[i] = saved + opt.step;
        fp = loss().item();
        v[i] = saved - opt.step;
        fm = loss().item();
        v[i] = saved;
      }
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        rep.finite = false;
        rep.message = "non-finite loss while perturbing a parameter";
        return rep;
      }
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double rel = detail::relative_error(analytic[i], numeric, opt.floor);
      rep.max_absolute_error = std::max(rep.max_absolute_error, std::abs(analytic[i] - numeric));
      if (rel > rep.max_relative_error) {
        rep.max_relative_error = rel;
        rep.worst_index = flat_offset + i;
      }
      ++rep.checked;
    }
    flat_offset += p.size();
  }
  rep.passed = rep.finite && rep.max_relative_error < opt.tolerance;
  if (!rep.passed && rep.message.empty())
    rep.message = "max relative error " + std::to_string(rep.max_relative_error);
  return rep;
}

}  // namespace gcnet

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gcnet/numerics/checkpoint.hpp"

namespace gcnet {

template <class T>
class adam {
 public:
  using parameter_list = std::vector<std::pair<std::string, std::reference_wrapper<basic_tensor<T>>>>;

  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit adam(double lr = 1e-3) : lr_(lr) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::size_t steps() const { return t_; }

  /// One update from the gradients currently stored on `params`, which are
  /// cleared afterwards. Parameters without a gradient are left alone.
  void step(parameter_list& params) {
    if (m_.empty()) init(params);
    if (params.size() != m_.size()) throw std::logic_error("adam: parameter list changed");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, double(t_)), c2 = 1.0 - std::pow(beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].second.get();
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto x = p.mutable_data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < x.size(); ++k) {
        const double gk = double(g[k]);
        m[k] = beta1 * m[k] + (1 - beta1) * gk;
        v[k] = beta2 * v[k] + (1 - beta2) * gk * gk;
        x[k] = T(double(x[k]) - lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps));
      }
      p.zero_grad();
    }
  }

  void store(const parameter_list& params, checkpoint& ck) const {
    ck.set_meta("adam.t", std::to_string(t_));
    char lr[32];
    std::snprintf(lr, sizeof lr, "%.17g", lr_);
    ck.set_meta("adam.lr", lr);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      ck.put_values("adam.m." + params[i].first, shape_t{m_[i].size()}, m_[i]);
      ck.put_values("adam.v." + params[i].first, shape_t{v_[i].size()}, v_[i]);
    }
  }

  void restore(const parameter_list& params, const checkpoint& ck) {
    t_ = std::stoul(ck.meta("adam.t"));
    lr_ = std::stod(ck.meta("adam.lr"));
    m_.clear();
    v_.clear();
    if (t_ == 0) return;
    for (const auto& [name, p] : params) {
      m_.push_back(ck.values<double>("adam.m." + name));
      v_.push_back(ck.values<double>("adam.v." + name));
      if (m_.back().size() != p.get().size()) throw format_error("checkpoint: optimizer state mismatch for " + name);
    }
  }

 private:
  void init(const parameter_list& params) {
    for (const auto& [name, p] : params) {
      m_.emplace_back(p.get().size(), 0.0);
      v_.emplace_back(p.get().size(), 0.0);
    }
  }

  double lr_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace gcnet

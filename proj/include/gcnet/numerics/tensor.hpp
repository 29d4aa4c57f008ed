// Dense tensors with reverse-mode differentiation.
//
// A basic_tensor is a cheap handle onto a shared graph node. Operations in
// ops.hpp create new nodes that remember their inputs and a local adjoint
// rule; backward() replays those rules in reverse topological order.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace gcnet {

using shape_t = std::vector<std::size_t>;

inline std::size_t element_count(const shape_t& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const shape_t& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <class T>
struct node {
  shape_t shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

// Multiply-accumulate counter for the dense kernels; used to assert
// asymptotic cost of inference paths.
inline std::uint64_t& mac_counter() {
  thread_local std::uint64_t count = 0;
  return count;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class no_grad_guard {
 public:
  no_grad_guard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~no_grad_guard() { detail::grad_mode() = previous_; }
  no_grad_guard(const no_grad_guard&) = delete;
  no_grad_guard& operator=(const no_grad_guard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Multiply-accumulate operations performed by matmul/conv kernels on this thread.
struct op_counter {
  static std::uint64_t value() { return detail::mac_counter(); }
  static void reset() { detail::mac_counter() = 0; }
  static void add(std::uint64_t n) { detail::mac_counter() += n; }
};

template <class T>
class basic_tensor {
 public:
  using value_type = T;
  using node_type = detail::node<T>;

  basic_tensor() = default;

  explicit basic_tensor(shape_t shape, T fill = T(0)) : impl_(std::make_shared<node_type>()) {
    impl_->value.assign(element_count(shape), fill);
    impl_->shape = std::move(shape);
  }

  basic_tensor(shape_t shape, std::vector<T> data) : impl_(std::make_shared<node_type>()) {
    if (element_count(shape) != data.size())
      throw shape_error("tensor: shape " + shape_string(shape) + " does not match " +
                        std::to_string(data.size()) + " values");
    impl_->shape = std::move(shape);
    impl_->value = std::move(data);
  }

  static basic_tensor scalar(T v) { return basic_tensor(shape_t{}, std::vector<T>{v}); }

  explicit basic_tensor(std::shared_ptr<node_type> impl) : impl_(std::move(impl)) {}

  bool defined() const { return static_cast<bool>(impl_); }
  const shape_t& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->value.size(); }

  std::span<const T> data() const { return impl_->value; }
  // Only meaningful on leaves (parameters, inputs); nodes already consumed by
  // a recorded graph must not be edited.
  std::span<T> mutable_data() { return impl_->value; }
  const std::vector<T>& values() const { return impl_->value; }

  T item() const {
    if (size() != 1) throw shape_error("item() on tensor of shape " + shape_string(shape()));
    return impl_->value[0];
  }
  T operator[](std::size_t i) const { return impl_->value[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  basic_tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return impl_->grad.size() == impl_->value.size() && size() > 0; }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  /// Leaf copy of the value with no history and no gradient tracking.
  basic_tensor detach() const { return basic_tensor(shape(), impl_->value); }

  template <class U>
  basic_tensor<U> cast() const {
    std::vector<U> out(impl_->value.begin(), impl_->value.end());
    return basic_tensor<U>(shape(), std::move(out));
  }

  const char* op_name() const { return impl_->op; }
  node_type* node() const { return impl_.get(); }
  const std::shared_ptr<node_type>& impl() const { return impl_; }

 private:
  std::shared_ptr<node_type> impl_;
};

using tensor = basic_tensor<double>;
using tensorf = basic_tensor<float>;

namespace detail {

// Builds an op result. History is recorded only when grad mode is on and some
// input requires a gradient.
template <class T, class Backward>
basic_tensor<T> make_result(const char* op, shape_t shape, std::vector<T> value,
                            std::initializer_list<basic_tensor<T>> inputs, Backward&& backward) {
  auto n = std::make_shared<node<T>>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode())
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->parents.push_back(in.impl());
    n->backward_fn = std::forward<Backward>(backward);
  }
  return basic_tensor<T>(std::move(n));
}

template <class T, class Backward>
basic_tensor<T> make_result(const char* op, shape_t shape, std::vector<T> value,
                            const std::vector<basic_tensor<T>>& inputs, Backward&& backward) {
  auto n = std::make_shared<node<T>>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode())
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  if (needs) {
    n->requires_grad = true;
    for (const auto& in : inputs) n->parents.push_back(in.impl());
    n->backward_fn = std::forward<Backward>(backward);
  }
  return basic_tensor<T>(std::move(n));
}

// Gradient sink for parent i, or nullptr when that parent is constant.
template <class T>
T* grad_sink(node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

}  // namespace detail

/// Nodes reachable from `root` that take part in differentiation, in
/// topological order (inputs before outputs).
template <class T>
std::vector<detail::node<T>*> topological_order(const basic_tensor<T>& root) {
  std::vector<detail::node<T>*> order;
  std::unordered_set<detail::node<T>*> visited;
  std::vector<std::pair<detail::node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

/// Reverse-mode sweep from a scalar loss.
///
/// Interior gradients are recomputed on every call; leaf gradients
/// accumulate until zero_grad() is called on the leaf.
template <class T>
void backward(const basic_tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw shape_error("backward: loss must be a scalar, got " +
                      (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;
  auto order = topological_order(loss);
  for (auto* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  loss.node()->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace gcnet

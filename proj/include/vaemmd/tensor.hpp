#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vaemmd/error.hpp"

namespace vaemmd {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool grad_ready = false;  // leaf grads populated by a backward pass
  bool consumed = false;    // interior node already backpropagated
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Thread-local switch consulted by every op before recording history.
bool grad_enabled();
void set_grad_enabled(bool enabled);

}  // namespace detail

/// Disables graph recording for its lifetime (inference, metric passes).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Shared handle to a node of the reverse-mode graph. Copies alias the same
/// storage; values are treated as immutable except through `mutable_data`
/// on leaves (optimizer updates).
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int64_t dim(size_t axis) const { return node_->shape.at(axis); }
  size_t rank() const { return node_->shape.size(); }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T item() const;
  T at(int64_t flat) const { return node_->data.at(static_cast<size_t>(flat)); }

  bool requires_grad() const { return node_->requires_grad; }
  /// Only meaningful on leaves; used to freeze a parameter group.
  void set_requires_grad(bool on);
  bool has_grad() const { return node_->grad_ready; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad();

  /// Reverse pass from a single-element tensor. Throws if the loss is not a
  /// scalar, if the graph was already consumed, or if any reachable leaf
  /// still holds gradients from an earlier pass (no silent accumulation).
  void backward();

  /// New leaf holding a copy of the values, disconnected from the graph.
  Tensor detach() const;

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

/// Builds an op result. `inputs` are the operands; only those on the graph
/// are retained. `backward` runs with the result node once its grad exists.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward);

/// Adds into an input's grad buffer, skipping inputs off the graph.
template <typename T, typename F>
void accumulate(const std::shared_ptr<Node<T>>& input, F&& fn) {
  if (input && input->requires_grad) fn(input->grad_buffer());
}

}  // namespace detail

}  // namespace vaemmd

#include "vaemmd/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace vaemmd {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    require(d > 0, ErrorCode::kInvalidArgument, "tensor dimensions must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool enabled) { g_grad_enabled = enabled; }

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  require(static_cast<int64_t>(data.size()) == shape_numel(shape), ErrorCode::kInvalidArgument,
          "op result size does not match shape " + shape_str(shape));
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) {
        require(!in.node()->consumed, ErrorCode::kState, "operand belongs to an already backpropagated graph");
        node->inputs.push_back(in.node());
      }
    }
    if (!node->inputs.empty()) {
      node->requires_grad = true;
      node->backward_fn = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(static_cast<size_t>(n), value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  auto node = std::make_shared<detail::Node<T>>();
  require(static_cast<int64_t>(values.size()) == shape_numel(shape), ErrorCode::kInvalidArgument,
          "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  require(numel() == 1, ErrorCode::kInvalidArgument, "item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  require(node_->is_leaf(), ErrorCode::kState, "requires_grad can only be toggled on leaves");
  node_->requires_grad = on;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.clear();
  node_->grad_ready = false;
}

template <typename T>
void Tensor<T>::backward() {
  using N = detail::Node<T>;
  require(numel() == 1, ErrorCode::kInvalidArgument, "backward() needs a scalar loss, got " + shape_str(shape()));
  require(node_->requires_grad, ErrorCode::kState, "loss is not connected to any tensor requiring grad");
  require(!node_->consumed, ErrorCode::kState, "graph already backpropagated");

  // Iterative post-order DFS; `order` ends up with inputs before consumers.
  std::vector<N*> order;
  std::unordered_set<N*> visited;
  std::vector<std::pair<N*, size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      N* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (N* n : order) {
    if (n->is_leaf()) {
      require(!n->grad_ready, ErrorCode::kState,
              "leaf gradient already populated; call zero_grad() before another backward pass");
      n->grad.clear();
    } else {
      require(!n->consumed, ErrorCode::kState, "graph already backpropagated");
    }
  }

  node_->grad_buffer()[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    N* n = *it;
    if (n->is_leaf()) continue;
    n->grad_buffer();
    n->backward_fn(*n);
  }
  for (N* n : order) {
    if (n->is_leaf()) {
      n->grad_buffer();
      n->grad_ready = true;
    } else {
      n->consumed = true;
      n->backward_fn = nullptr;
      n->inputs.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->data, false);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace vaemmd

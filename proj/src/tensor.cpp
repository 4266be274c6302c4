#include "gemtrans/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "gemtrans/error.hpp"

namespace gemtrans {

namespace {

std::atomic<std::uint64_t> next_node_id{1};

template <typename T>
std::shared_ptr<Node<T>> new_node(const char* op, Shape shape, std::vector<T> value) {
  if (numel(shape) != value.size()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(shape) + " does not match " +
                     std::to_string(value.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  detail::check_finite<T>("constant", values);
  return Tensor(new_node<T>("constant", std::move(shape), std::move(values)));
}

template <typename T>
Tensor<T> Tensor<T>::variable(Shape shape, std::vector<T> values) {
  detail::check_finite<T>("variable", values);
  auto node = new_node<T>("leaf", std::move(shape), std::move(values));
  node->requires_grad = true;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const auto n = gemtrans::numel(shape);
  return constant(std::move(shape), std::vector<T>(n, T{0}));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = gemtrans::numel(shape);
  return constant(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return constant({}, {value});
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(new_node<T>("detach", node_->shape, node_->value));
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the reachable graph.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

namespace detail {

template <typename T>
void check_finite(const char* op, std::span<const T> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at element " +
                         std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> backward) {
  check_finite<T>(op, value);
  auto node = new_node<T>(op, std::move(shape), std::move(value));
  bool tracked = false;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  if (tracked) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template void check_finite<float>(const char*, std::span<const float>);
template void check_finite<double>(const char*, std::span<const double>);
template Tensor<float> make_result<float>(const char*, Shape, std::vector<float>,
                                          std::vector<Tensor<float>>, BackwardFn<float>);
template Tensor<double> make_result<double>(const char*, Shape, std::vector<double>,
                                            std::vector<Tensor<double>>, BackwardFn<double>);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;

}  // namespace gemtrans

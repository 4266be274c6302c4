#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gemtrans {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// One vertex of the reverse-mode graph. Values are written once by the op
/// that creates the node; `grad` is allocated lazily during backward.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  std::uint64_t id = 0;
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), T{0});
    return grad;
  }
  Node& input(std::size_t i) { return *inputs[i]; }
};

/// Dense tensor handle with reverse-mode differentiation.
///
/// A Tensor is a cheap shared handle to an immutable node. Ops build new nodes
/// and record their inputs when any input requires a gradient; calling
/// backward() on a scalar result accumulates gradients into every reachable
/// leaf. A graph is meant to be built and consumed on a single thread.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor variable(Shape shape, std::vector<T> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  T item() const;
  T operator[](std::size_t flat) const { return node_->value[flat]; }
  std::vector<T> to_vector() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  std::uint64_t id() const { return node_->id; }
  const char* op() const { return node_->op; }

  // Seeds d(self)/d(self) = 1 and propagates through the recorded graph.
  void backward() const;
  // Same value, cut from the graph.
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

// Creates an op result, validating that every value is finite. The backward
// closure and the inputs are only retained when some input requires a gradient.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> inputs, BackwardFn<T> backward);

template <typename T>
void check_finite(const char* op, std::span<const T> values);

}  // namespace detail

}  // namespace gemtrans

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gemtrans/tensor.hpp"

// Differentiable tensor operations. Binary elementwise ops broadcast with
// numpy rules (shapes aligned on the right, size-1 axes stretch). Reductions
// and slicing ops drop the reduced axis. All ops throw ShapeError on
// incompatible operands and NumericError on non-finite results.

namespace gemtrans {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> square(const Tensor<T>& a);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
// Exact (erf) form.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);

// a[m×k] · b[k×n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., k] · w[k×n] + bias[n]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);
// Batched a[B×m×k] · b[B×k×n], or a · bᵀ with b[B×n×k] when transpose_b.
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
// Normalizes over the last axis, then applies gain and bias.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> transpose(const Tensor<T>& x);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
// Elements [begin, end) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
// One index along axis; the axis is removed.
template <typename T> Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis);
// Max along axis; the gradient goes to the first maximal element.
template <typename T> Tensor<T> max(const Tensor<T>& x, std::size_t axis);

// Rows of table[V×d] picked by index, giving [n×d].
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::size_t> indices);
// Mean over rows of -log softmax(logits)[label]; logits are [N×C].
template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const std::size_t> labels);
// x / sqrt(|x|² + eps) along the last axis.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, T eps);
// Inverted dropout with a Bernoulli mask drawn from `seed`; identity when p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, std::uint64_t seed);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

}  // namespace gemtrans

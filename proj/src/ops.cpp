#include "gemtrans/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "gemtrans/error.hpp"
#include "gemtrans/kernels.hpp"
#include "gemtrans/random.hpp"

namespace gemtrans {

namespace {

using detail::make_result;

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void check_axis(const char* op, const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  }
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

// Flat source offsets of each output element for numpy-style broadcasting.
// An empty offset table means the operand already has the output shape.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> a_off, b_off;
};

std::vector<std::size_t> broadcast_offsets(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    stride[lead + i] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t total = numel(out);
  std::vector<std::size_t> offsets(total);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    offsets[flat] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < out[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offsets;
}

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan plan;
  const std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    plan.out[rank - 1 - i] = std::max(da, db);
  }
  if (a != plan.out) plan.a_off = broadcast_offsets(a, plan.out);
  if (b != plan.out) plan.b_off = broadcast_offsets(b, plan.out);
  return plan;
}

// f(x, y) forward; da/db give d out / d x and d out / d y from (x, y, out).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(op, a.shape(), b.shape()));
  const std::size_t n = numel(plan->out);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t ia = plan->a_off.empty() ? i : plan->a_off[i];
    const std::size_t ib = plan->b_off.empty() ? i : plan->b_off[i];
    out[i] = f(av[ia], bv[ib]);
  }
  Shape shape = plan->out;
  return make_result<T>(op, std::move(shape), std::move(out), {a, b}, [plan, da, db](Node<T>& self) {
    Node<T>& A = self.input(0);
    Node<T>& B = self.input(1);
    const std::size_t n = self.value.size();
    if (A.requires_grad) {
      auto& ga = A.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = plan->a_off.empty() ? i : plan->a_off[i];
        const std::size_t ib = plan->b_off.empty() ? i : plan->b_off[i];
        ga[ia] += self.grad[i] * da(A.value[ia], B.value[ib], self.value[i]);
      }
    }
    if (B.requires_grad) {
      auto& gb = B.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = plan->a_off.empty() ? i : plan->a_off[i];
        const std::size_t ib = plan->b_off.empty() ? i : plan->b_off[i];
        gb[ib] += self.grad[i] * db(A.value[ia], B.value[ib], self.value[i]);
      }
    }
  });
}

// f(x) forward; df gives d out / d x from (x, out).
template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, DF df) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a}, [df](Node<T>& self) {
    Node<T>& A = self.input(0);
    auto& ga = A.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      ga[i] += self.grad[i] * df(A.value[i], self.value[i]);
  });
}

// Gather-style op: out[i] = in[map[i]], gradient scatters back.
template <typename T>
Tensor<T> gather(const char* op, const Tensor<T>& x, Shape shape,
                 std::shared_ptr<const std::vector<std::size_t>> map) {
  const auto xv = x.data();
  std::vector<T> out(map->size());
  for (std::size_t i = 0; i < map->size(); ++i) out[i] = xv[(*map)[i]];
  return make_result<T>(op, std::move(shape), std::move(out), {x}, [map](Node<T>& self) {
    auto& gx = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += self.grad[i];
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("add", a, b, [](T x, T y) { return x + y; },
                   [](T, T, T) { return T{1}; }, [](T, T, T) { return T{1}; });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("sub", a, b, [](T x, T y) { return x - y; },
                   [](T, T, T) { return T{1}; }, [](T, T, T) { return T{-1}; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("mul", a, b, [](T x, T y) { return x * y; },
                   [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>("div", a, b, [](T x, T y) { return x / y; },
                   [](T, T y, T) { return T{1} / y; }, [](T, T y, T out) { return -out / y; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>("scale", a, [factor](T x) { return x * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary<T>("add_scalar", a, [value](T x) { return x + value; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary<T>("relu", a, [](T x) { return x > T{0} ? x : T{0}; },
                  [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  kernels::gelu(a.data().data(), out.data(), out.size());
  return make_result<T>("gelu", a.shape(), std::move(out), {a}, [](Node<T>& self) {
    Node<T>& A = self.input(0);
    auto& ga = A.grad_buffer();
    const T inv_sqrt2 = T{1} / std::numbers::sqrt2_v<T>;
    const T inv_sqrt2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      const T x = A.value[i];
      const T cdf = T{0.5} * (T{1} + std::erf(x * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * x * x);
      ga[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
        const T e = std::exp(x);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  kernels::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return make_result<T>("matmul", {m, n}, std::move(out), {a, b}, [m, n, k](Node<T>& self) {
    Node<T>& A = self.input(0);
    Node<T>& B = self.input(1);
    if (A.requires_grad)
      kernels::gemm(false, true, m, k, n, self.grad.data(), B.value.data(), A.grad_buffer().data(), true);
    if (B.requires_grad)
      kernels::gemm(true, false, k, n, m, A.value.data(), self.grad.data(), B.grad_buffer().data(), true);
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0)) shape_fail("linear", x.shape(), w.shape());
  const std::size_t k = w.dim(0), n = w.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) shape_fail("linear", w.shape(), bias.shape());
  const std::size_t rows = x.numel() / k;
  std::vector<T> out(rows * n);
  kernels::gemm(false, false, rows, n, k, x.data().data(), w.data().data(), out.data(), false);
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  }
  Shape shape = x.shape();
  shape.back() = n;
  std::vector<Tensor<T>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>("linear", std::move(shape), std::move(out), std::move(inputs),
                        [rows, n, k](Node<T>& self) {
    Node<T>& X = self.input(0);
    Node<T>& W = self.input(1);
    if (X.requires_grad)
      kernels::gemm(false, true, rows, k, n, self.grad.data(), W.value.data(), X.grad_buffer().data(), true);
    if (W.requires_grad)
      kernels::gemm(true, false, k, n, rows, X.value.data(), self.grad.data(), W.grad_buffer().data(), true);
    if (self.inputs.size() > 2 && self.input(2).requires_grad) {
      auto& gb = self.input(2).grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[r * n + j];
    }
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) shape_fail("bmm", a.shape(), b.shape());
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if ((transpose_b ? b.dim(2) : b.dim(1)) != k) shape_fail("bmm", a.shape(), b.shape());
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i)
    kernels::gemm(false, transpose_b, m, n, k, a.data().data() + i * m * k,
                  b.data().data() + i * k * n, out.data() + i * m * n, false);
  return make_result<T>("bmm", {batch, m, n}, std::move(out), {a, b},
                        [batch, m, n, k, transpose_b](Node<T>& self) {
    Node<T>& A = self.input(0);
    Node<T>& B = self.input(1);
    for (std::size_t i = 0; i < batch; ++i) {
      const T* g = self.grad.data() + i * m * n;
      const T* av = A.value.data() + i * m * k;
      const T* bv = B.value.data() + i * k * n;
      if (A.requires_grad) {
        // dA = dC·Bᵀ (B is k×n) or dC·B (B is n×k)
        kernels::gemm(false, !transpose_b, m, k, n, g, bv, A.grad_buffer().data() + i * m * k, true);
      }
      if (B.requires_grad) {
        T* gb = B.grad_buffer().data() + i * k * n;
        if (transpose_b)
          kernels::gemm(true, false, n, k, m, g, av, gb, true);  // dB = dCᵀ·A
        else
          kernels::gemm(true, false, k, n, m, av, g, gb, true);  // dB = Aᵀ·dC
      }
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  check_axis("softmax", x.shape(), axis);
  const auto s = split_at(x.shape(), axis);
  std::vector<T> out(x.numel());
  kernels::softmax(x.data().data(), out.data(), s.outer, s.n, s.inner);
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [s](Node<T>& self) {
    auto& gx = self.input(0).grad_buffer();
    const T* y = self.value.data();
    const T* g = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        T dot{0};
        for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t at = base + j * s.inner;
          gx[at] += y[at] * (g[at] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() < 1) shape_fail("layernorm", x.shape(), gain.shape());
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d}) shape_fail("layernorm", x.shape(), gain.shape());
  if (bias.shape() != Shape{d}) shape_fail("layernorm", x.shape(), bias.shape());
  if (!(eps > T{0})) throw ShapeError("layernorm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  auto normalized = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  kernels::layernorm(x.data().data(), gain.data().data(), bias.data().data(), out.data(),
                     normalized->data(), inv_std->data(), rows, d, eps);
  return make_result<T>("layernorm", x.shape(), std::move(out), {x, gain, bias},
                        [rows, d, normalized, inv_std](Node<T>& self) {
    Node<T>& X = self.input(0);
    Node<T>& G = self.input(1);
    Node<T>& B = self.input(2);
    const T* g = self.grad.data();
    const T* xh = normalized->data();
    if (G.requires_grad) {
      auto& gg = G.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xh[r * d + j];
    }
    if (B.requires_grad) {
      auto& gb = B.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
    }
    if (X.requires_grad) {
      auto& gx = X.grad_buffer();
      const T inv_d = T{1} / static_cast<T>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_dxh{0}, mean_dxh_xh{0};
        for (std::size_t j = 0; j < d; ++j) {
          const T dxh = g[r * d + j] * G.value[j];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[r * d + j];
        }
        mean_dxh *= inv_d;
        mean_dxh_xh *= inv_d;
        const T rstd = (*inv_std)[r];
        for (std::size_t j = 0; j < d; ++j) {
          const T dxh = g[r * d + j] * G.value[j];
          gx[r * d + j] += rstd * (dxh - mean_dxh - xh[r * d + j] * mean_dxh_xh);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  return make_result<T>("reshape", std::move(shape), x.to_vector(), {x}, [](Node<T>& self) {
    auto& gx = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) throw ShapeError("permute: axis list does not match rank of " + shape_str(x.shape()));
  for (auto a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axis list for " + shape_str(x.shape()));
    seen[a] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.shape()[i];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.shape()[axes[i]];
    stride[i] = in_stride[axes[i]];
  }
  auto map = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < map->size(); ++flat) {
    (*map)[flat] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return gather<T>("permute", x, std::move(out_shape), std::move(map));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, Shape shape) {
  const auto plan = plan_broadcast("broadcast_to", x.shape(), shape);
  if (plan.out != shape) shape_fail("broadcast_to", x.shape(), shape);
  if (plan.a_off.empty()) return reshape(x, std::move(shape));
  auto map = std::make_shared<const std::vector<std::size_t>>(plan.a_off);
  return gather<T>("broadcast_to", x, std::move(shape), std::move(map));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  check_axis("concat", first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) shape_fail("concat", first, p.shape());
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && p.shape()[i] != first[i]) shape_fail("concat", first, p.shape());
    out_shape[axis] += p.shape()[axis];
  }
  const auto s = split_at(out_shape, axis);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * s.inner);
  const std::size_t row = s.n * s.inner;
  std::vector<T> out(numel(out_shape));
  std::size_t col = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pv = parts[pi].data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * widths[pi]), widths[pi],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
    col += widths[pi];
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), parts,
                        [widths, row, outer = s.outer](Node<T>& self) {
    std::size_t col = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      Node<T>& P = self.input(pi);
      if (P.requires_grad) {
        auto& gp = P.grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t j = 0; j < widths[pi]; ++j) gp[o * widths[pi] + j] += self.grad[o * row + col + j];
      }
      col += widths[pi];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  check_axis("slice", x.shape(), axis);
  if (begin >= end || end > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t width = (end - begin) * s.inner;
  auto map = std::make_shared<std::vector<std::size_t>>();
  map->reserve(s.outer * width);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < width; ++j) map->push_back(o * s.n * s.inner + begin * s.inner + j);
  return gather<T>("slice", x, std::move(out_shape), std::move(map));
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index) {
  check_axis("select", x.shape(), axis);
  return reshape(slice(x, axis, index, index + 1), drop_axis(x.shape(), axis));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total{0};
  for (T v : x.data()) total += v;
  return make_result<T>("sum", {}, {total}, {x}, [](Node<T>& self) {
    auto& gx = self.input(0).grad_buffer();
    for (auto& g : gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  check_axis("sum", x.shape(), axis);
  const auto s = split_at(x.shape(), axis);
  std::vector<T> out(s.outer * s.inner, T{0});
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.n + j) * s.inner + i];
  return make_result<T>("sum_axis", drop_axis(x.shape(), axis), std::move(out), {x}, [s](Node<T>& self) {
    auto& gx = self.input(0).grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t i = 0; i < s.inner; ++i) gx[(o * s.n + j) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  check_axis("mean", x.shape(), axis);
  return scale(sum(x, axis), T{1} / static_cast<T>(x.shape()[axis]));
}

template <typename T>
Tensor<T> max(const Tensor<T>& x, std::size_t axis) {
  check_axis("max", x.shape(), axis);
  const auto s = split_at(x.shape(), axis);
  if (s.n == 0) throw ShapeError("max over an empty axis");
  auto arg = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
  std::vector<T> out(s.outer * s.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.n * s.inner + i;
      for (std::size_t j = 1; j < s.n; ++j) {
        const std::size_t at = (o * s.n + j) * s.inner + i;
        if (xv[at] > xv[best]) best = at;
      }
      (*arg)[o * s.inner + i] = best;
      out[o * s.inner + i] = xv[best];
    }
  }
  return make_result<T>("max", drop_axis(x.shape(), axis), std::move(out), {x}, [arg](Node<T>& self) {
    auto& gx = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < arg->size(); ++i) gx[(*arg)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be a matrix, got " + shape_str(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  auto map = std::make_shared<std::vector<std::size_t>>();
  map->reserve(indices.size() * d);
  for (auto idx : indices) {
    if (idx >= vocab) {
      throw ShapeError("embedding: row " + std::to_string(idx) + " out of range for " + shape_str(table.shape()));
    }
    for (std::size_t j = 0; j < d; ++j) map->push_back(idx * d + j);
  }
  return gather<T>("embedding", table, {indices.size(), d}, std::move(map));
}

template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy_with_logits: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  auto probs = std::make_shared<std::vector<T>>(rows * classes);
  kernels::softmax(logits.data().data(), probs->data(), rows, classes, 1);
  const auto lv = logits.data();
  T loss{0};
  for (std::size_t r = 0; r < rows; ++r) {
    if (labels[r] >= classes) throw ShapeError("cross_entropy_with_logits: label out of range");
    T max_v = lv[r * classes];
    for (std::size_t c = 1; c < classes; ++c) max_v = std::max(max_v, lv[r * classes + c]);
    T total{0};
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(lv[r * classes + c] - max_v);
    loss += max_v + std::log(total) - lv[r * classes + labels[r]];
  }
  loss /= static_cast<T>(rows);
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return make_result<T>("cross_entropy", {}, {loss}, {logits},
                        [probs, targets = std::move(targets), rows, classes](Node<T>& self) {
    auto& gl = self.input(0).grad_buffer();
    const T g = self.grad[0] / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < classes; ++c)
        gl[r * classes + c] += g * ((*probs)[r * classes + c] - (c == targets[r] ? T{1} : T{0}));
  });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
  if (x.rank() < 1) throw ShapeError("l2_normalize: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto norms = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T ss{0};
    for (std::size_t j = 0; j < d; ++j) ss += xv[r * d + j] * xv[r * d + j];
    const T norm = std::sqrt(ss + eps);
    (*norms)[r] = norm;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xv[r * d + j] / norm;
  }
  return make_result<T>("l2_normalize", x.shape(), std::move(out), {x}, [norms, rows, d](Node<T>& self) {
    auto& gx = self.input(0).grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t j = 0; j < d; ++j) dot += self.grad[r * d + j] * self.value[r * d + j];
      for (std::size_t j = 0; j < d; ++j)
        gx[r * d + j] += (self.grad[r * d + j] - self.value[r * d + j] * dot) / (*norms)[r];
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::uint64_t seed) {
  if (p < 0.0 || p >= 1.0) throw ShapeError("dropout: rate must be in [0, 1)");
  if (p == 0.0) return x;
  std::mt19937_64 rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  for (auto& m : *mask) m = uniform01(rng) >= p ? keep_scale : T{0};
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * (*mask)[i];
  return make_result<T>("dropout", x.shape(), std::move(out), {x}, [mask](Node<T>& self) {
    auto& gx = self.input(0).grad_buffer();
    for (std::size_t i = 0; i < mask->size(); ++i) gx[i] += self.grad[i] * (*mask)[i];
  });
}

#define GEMTRANS_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                        \
  template Tensor<T> square(const Tensor<T>&);                                               \
  template Tensor<T> relu(const Tensor<T>&);                                                 \
  template Tensor<T> gelu(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);                          \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                 \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> transpose(const Tensor<T>&);                                            \
  template Tensor<T> broadcast_to(const Tensor<T>&, Shape);                                  \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                     \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);         \
  template Tensor<T> select(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> sum(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                    \
  template Tensor<T> max(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::size_t>);              \
  template Tensor<T> cross_entropy_with_logits(const Tensor<T>&, std::span<const std::size_t>); \
  template Tensor<T> l2_normalize(const Tensor<T>&, T);                                      \
  template Tensor<T> dropout(const Tensor<T>&, double, std::uint64_t);

GEMTRANS_INSTANTIATE_OPS(float)
GEMTRANS_INSTANTIATE_OPS(double)

#undef GEMTRANS_INSTANTIATE_OPS

}  // namespace gemtrans

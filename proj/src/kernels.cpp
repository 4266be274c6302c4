#include "gemtrans/kernels.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gemtrans::kernels {

namespace {

// One output row of C. `bt` is B already laid out k×n.
template <typename T>
inline void gemm_row(std::size_t i, bool trans_a, std::size_t m, std::size_t n, std::size_t k,
                     const T* a, const T* bt, T* c, bool accumulate) {
  T* row = c + i * n;
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) row[j] = T{0};
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T aip = trans_a ? a[p * m + i] : a[i * k + p];
    const T* brow = bt + p * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
  }
}

template <typename T>
std::vector<T> transpose_copy(const T* b, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = b[r * cols + c];
  return out;
}

template <typename T>
inline void softmax_slice(const T* in, T* out, std::size_t n, std::size_t inner) {
  T max_v = in[0];
  for (std::size_t j = 1; j < n; ++j) max_v = std::max(max_v, in[j * inner]);
  T total{0};
  for (std::size_t j = 0; j < n; ++j) {
    const T e = std::exp(in[j * inner] - max_v);
    out[j * inner] = e;
    total += e;
  }
  const T inv = T{1} / total;
  for (std::size_t j = 0; j < n; ++j) out[j * inner] *= inv;
}

template <typename T>
inline void layernorm_row(const T* x, const T* gain, const T* bias, T* out, T* normalized,
                          T* inv_std, std::size_t cols, T eps) {
  T mean{0};
  for (std::size_t j = 0; j < cols; ++j) mean += x[j];
  mean /= static_cast<T>(cols);
  T var{0};
  for (std::size_t j = 0; j < cols; ++j) {
    const T c = x[j] - mean;
    var += c * c;
  }
  var /= static_cast<T>(cols);
  const T rstd = T{1} / std::sqrt(var + eps);
  *inv_std = rstd;
  for (std::size_t j = 0; j < cols; ++j) {
    const T xh = (x[j] - mean) * rstd;
    normalized[j] = xh;
    out[j] = xh * gain[j] + bias[j];
  }
}

template <typename T>
inline T gelu_value(T x) {
  return T{0.5} * x * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

}  // namespace

namespace serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  std::vector<T> scratch;
  const T* bt = b;
  if (trans_b) {
    scratch = transpose_copy(b, n, k);
    bt = scratch.data();
  }
  for (std::size_t i = 0; i < m; ++i) gemm_row(i, trans_a, m, n, k, a, bt, c, accumulate);
}

template <typename T>
void softmax(const T* in, T* out, std::size_t outer, std::size_t n, std::size_t inner) {
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i)
      softmax_slice(in + o * n * inner + i, out + o * n * inner + i, n, inner);
}

template <typename T>
void layernorm(const T* in, const T* gain, const T* bias, T* out, T* normalized, T* inv_std,
               std::size_t rows, std::size_t cols, T eps) {
  for (std::size_t r = 0; r < rows; ++r)
    layernorm_row(in + r * cols, gain, bias, out + r * cols, normalized + r * cols, inv_std + r,
                  cols, eps);
}

template <typename T>
void gelu(const T* in, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = gelu_value(in[i]);
}

}  // namespace serial

namespace parallel {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  std::vector<T> scratch;
  const T* bt = b;
  if (trans_b) {
    scratch = transpose_copy(b, n, k);
    bt = scratch.data();
  }
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_row(static_cast<std::size_t>(i), trans_a, m, n, k, a, bt, c, accumulate);
}

template <typename T>
void softmax(const T* in, T* out, std::size_t outer, std::size_t n, std::size_t inner) {
  const auto slices = static_cast<std::ptrdiff_t>(outer * inner);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t s = 0; s < slices; ++s) {
    const std::size_t o = static_cast<std::size_t>(s) / inner;
    const std::size_t i = static_cast<std::size_t>(s) % inner;
    softmax_slice(in + o * n * inner + i, out + o * n * inner + i, n, inner);
  }
}

template <typename T>
void layernorm(const T* in, const T* gain, const T* bias, T* out, T* normalized, T* inv_std,
               std::size_t rows, std::size_t cols, T eps) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < count; ++r) {
    const auto row = static_cast<std::size_t>(r);
    layernorm_row(in + row * cols, gain, bias, out + row * cols, normalized + row * cols,
                  inv_std + row, cols, eps);
  }
}

template <typename T>
void gelu(const T* in, T* out, std::size_t n) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) out[i] = gelu_value(in[i]);
}

}  // namespace parallel

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

namespace {

inline bool go_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelThreshold && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (go_parallel(m * n * k) && m > 1)
    parallel::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate);
  else
    serial::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate);
}

template <typename T>
void softmax(const T* in, T* out, std::size_t outer, std::size_t n, std::size_t inner) {
  if (go_parallel(outer * n * inner))
    parallel::softmax(in, out, outer, n, inner);
  else
    serial::softmax(in, out, outer, n, inner);
}

template <typename T>
void layernorm(const T* in, const T* gain, const T* bias, T* out, T* normalized, T* inv_std,
               std::size_t rows, std::size_t cols, T eps) {
  if (go_parallel(rows * cols))
    parallel::layernorm(in, gain, bias, out, normalized, inv_std, rows, cols, eps);
  else
    serial::layernorm(in, gain, bias, out, normalized, inv_std, rows, cols, eps);
}

template <typename T>
void gelu(const T* in, T* out, std::size_t n) {
  if (go_parallel(n))
    parallel::gelu(in, out, n);
  else
    serial::gelu(in, out, n);
}

#define GEMTRANS_INSTANTIATE_KERNELS(NS, T)                                                 \
  template void NS gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*,     \
                           const T*, T*, bool);                                             \
  template void NS softmax<T>(const T*, T*, std::size_t, std::size_t, std::size_t);         \
  template void NS layernorm<T>(const T*, const T*, const T*, T*, T*, T*, std::size_t,      \
                                std::size_t, T);                                            \
  template void NS gelu<T>(const T*, T*, std::size_t);

GEMTRANS_INSTANTIATE_KERNELS(serial::, float)
GEMTRANS_INSTANTIATE_KERNELS(serial::, double)
GEMTRANS_INSTANTIATE_KERNELS(parallel::, float)
GEMTRANS_INSTANTIATE_KERNELS(parallel::, double)
GEMTRANS_INSTANTIATE_KERNELS(, float)
GEMTRANS_INSTANTIATE_KERNELS(, double)

#undef GEMTRANS_INSTANTIATE_KERNELS

}  // namespace gemtrans::kernels

#pragma once

#include <cstddef>

// Dense compute kernels behind the tensor ops.
//
// Every kernel exists twice: a plain serial reference and an OpenMP variant that
// partitions work by output row. Each output element is accumulated in the same
// order in both, so the two agree bitwise for any thread count. The unqualified
// entry points dispatch to the OpenMP variant when it was compiled in and the
// problem is large enough to amortize a parallel region.

namespace gemtrans::kernels {

// C[m×n] (+)= op(A) · op(B), op(A) is m×k, op(B) is k×n, all row-major.
// With accumulate, each element starts from its existing value, otherwise from 0;
// products are then added in increasing k.
#define GEMTRANS_KERNEL_DECLS                                                              \
  template <typename T>                                                                    \
  void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,       \
            const T* a, const T* b, T* c, bool accumulate);                                \
  /* softmax over the middle axis of an [outer, n, inner] block */                         \
  template <typename T>                                                                    \
  void softmax(const T* in, T* out, std::size_t outer, std::size_t n, std::size_t inner);  \
  /* row-wise layer norm; also emits the normalized rows and 1/sigma per row */            \
  template <typename T>                                                                    \
  void layernorm(const T* in, const T* gain, const T* bias, T* out, T* normalized,         \
                 T* inv_std, std::size_t rows, std::size_t cols, T eps);                   \
  template <typename T>                                                                    \
  void gelu(const T* in, T* out, std::size_t n);

namespace serial {
GEMTRANS_KERNEL_DECLS
}  // namespace serial

namespace parallel {
GEMTRANS_KERNEL_DECLS
}  // namespace parallel

GEMTRANS_KERNEL_DECLS

#undef GEMTRANS_KERNEL_DECLS

// True when the OpenMP variants were compiled with real OpenMP support.
bool openmp_enabled();

// Work (in multiply-adds or elements) below which dispatch stays serial.
inline constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace gemtrans::kernels

#include <random>

#include <gtest/gtest.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gemtrans/kernels.hpp"

using namespace gemtrans;

namespace {

template <typename T>
std::vector<T> random_values(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return v;
}

class ThreadCount : public ::testing::TestWithParam<int> {
 protected:
  void SetUp() override {
#ifdef _OPENMP
    saved_ = omp_get_max_threads();
    omp_set_num_threads(GetParam());
#endif
  }
  void TearDown() override {
#ifdef _OPENMP
    omp_set_num_threads(saved_);
#endif
  }
  int saved_ = 1;
};

}  // namespace

TEST_P(ThreadCount, GemmMatchesSerialBitwise) {
  const std::size_t m = 37, n = 29, k = 53;
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const auto a = random_values<float>(m * k, 1), b = random_values<float>(k * n, 2);
      auto c0 = random_values<float>(m * n, 3), c1 = c0;
      kernels::serial::gemm(ta, tb, m, n, k, a.data(), b.data(), c0.data(), true);
      kernels::parallel::gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), true);
      EXPECT_EQ(c0, c1) << ta << tb;
    }
  }
}

TEST_P(ThreadCount, SoftmaxLayernormGeluMatchSerialBitwise) {
  const std::size_t outer = 7, n = 33, inner = 5;
  const auto x = random_values<double>(outer * n * inner, 4);
  std::vector<double> s0(x.size()), s1(x.size());
  kernels::serial::softmax(x.data(), s0.data(), outer, n, inner);
  kernels::parallel::softmax(x.data(), s1.data(), outer, n, inner);
  EXPECT_EQ(s0, s1);

  const std::size_t rows = 41, cols = 17;
  const auto in = random_values<double>(rows * cols, 5), gain = random_values<double>(cols, 6),
             bias = random_values<double>(cols, 7);
  std::vector<double> o0(in.size()), o1(in.size()), z0(in.size()), z1(in.size()), i0(rows), i1(rows);
  kernels::serial::layernorm(in.data(), gain.data(), bias.data(), o0.data(), z0.data(), i0.data(), rows, cols, 1e-5);
  kernels::parallel::layernorm(in.data(), gain.data(), bias.data(), o1.data(), z1.data(), i1.data(), rows, cols, 1e-5);
  EXPECT_EQ(o0, o1);
  EXPECT_EQ(z0, z1);
  EXPECT_EQ(i0, i1);

  std::vector<double> g0(in.size()), g1(in.size());
  kernels::serial::gelu(in.data(), g0.data(), in.size());
  kernels::parallel::gelu(in.data(), g1.data(), in.size());
  EXPECT_EQ(g0, g1);
}

TEST_P(ThreadCount, DispatchAboveThresholdMatchesSerial) {
  const std::size_t m = 64, n = 64, k = 64;  // m·n·k above the threshold
  ASSERT_GT(m * n * k, kernels::kParallelThreshold);
  const auto a = random_values<float>(m * k, 8), b = random_values<float>(k * n, 9);
  std::vector<float> c0(m * n), c1(m * n);
  kernels::serial::gemm(false, false, m, n, k, a.data(), b.data(), c0.data(), false);
  kernels::gemm(false, false, m, n, k, a.data(), b.data(), c1.data(), false);
  EXPECT_EQ(c0, c1);
}

INSTANTIATE_TEST_SUITE_P(Threads, ThreadCount, ::testing::Values(1, 2, 3, 8));

TEST(Gemm, SmallKnownProduct) {
  const double a[] = {1, 2, 3, 4}, b[] = {5, 6, 7, 8};
  double c[4];
  kernels::serial::gemm(false, false, 2, 2, 2, a, b, c, false);
  EXPECT_EQ(std::vector<double>(c, c + 4), (std::vector<double>{19, 22, 43, 50}));
  kernels::serial::gemm(true, false, 2, 2, 2, a, b, c, false);  // aᵀ·b
  EXPECT_EQ(std::vector<double>(c, c + 4), (std::vector<double>{26, 30, 38, 44}));
}

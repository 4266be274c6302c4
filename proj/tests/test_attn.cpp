#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gemtrans/attn_supervision.hpp"
#include "gemtrans/error.hpp"
#include "gemtrans/grad_check.hpp"
#include "gemtrans/random.hpp"

using namespace gemtrans;
using TD = Tensor<double>;

namespace {

TD vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return TD::constant({n}, std::move(v));
}

// Direct evaluation of the two loss definitions with plain loops.
double spatial_ref(const std::vector<double>& a, const CoarseMask& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!m[i]) s += a[i] * a[i];
  return s;
}

double temporal_ref(const std::vector<double>& a, const std::vector<std::size_t>& targets) {
  double s = 0.0;
  for (auto t : targets) s += (a[t] - 1.0) * (a[t] - 1.0);
  return s;
}

std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> v(n);
  double total = 0.0;
  for (auto& x : v) total += x = uniform01(rng) + 1e-3;
  for (auto& x : v) x /= total;
  return v;
}

ForwardResult<double> fake_result(std::size_t videos, std::size_t frames, std::size_t patches, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> s, t;
  for (std::size_t f = 0; f < videos * frames; ++f)
    for (double x : random_simplex(patches, rng)) s.push_back(x);
  for (std::size_t k = 0; k < videos; ++k)
    for (double x : random_simplex(frames, rng)) t.push_back(x);
  ForwardResult<double> r;
  r.spatial_attention = TD::constant({videos * frames, patches}, s);
  r.temporal_attention = TD::constant({videos, frames}, t);
  return r;
}

}  // namespace

TEST(CoarsenMask, Examples) {
  EXPECT_EQ(coarsen_mask(std::vector<std::uint8_t>(16, 0), 4, 4, 2), CoarseMask(4, 0));
  std::vector<std::uint8_t> one(16, 0);
  one[0] = 1;
  EXPECT_EQ(coarsen_mask(one, 4, 4, 2), (CoarseMask{1, 0, 0, 0}));
  EXPECT_EQ(coarsen_mask(std::vector<std::uint8_t>(16, 1), 4, 4, 2), CoarseMask(4, 1));
  std::vector<std::uint8_t> corner(16, 0);
  corner[15] = 1;  // pixel (3,3) lives in the last patch
  EXPECT_EQ(coarsen_mask(corner, 4, 4, 2), (CoarseMask{0, 0, 0, 1}));
}

TEST(CoarsenMask, RejectsMismatchedShapes) {
  EXPECT_THROW(coarsen_mask(std::vector<std::uint8_t>(15, 0), 4, 4, 2), ShapeError);
  EXPECT_THROW(coarsen_mask(std::vector<std::uint8_t>(30, 0), 5, 6, 2), ConfigError);
}

TEST(UnionMasks, Examples) {
  const CoarseMask x{1, 0, 0, 1}, y{0, 1, 0, 1};
  EXPECT_EQ(union_masks(x, y), (CoarseMask{1, 1, 0, 1}));
  EXPECT_EQ(union_masks(x, CoarseMask(4, 0)), x);
  EXPECT_EQ(union_masks(x, x), x);
  EXPECT_THROW(union_masks(x, CoarseMask(3, 0)), ShapeError);
}

TEST(SpatialLoss, Examples) {
  const auto uniform = vec({0.25, 0.25, 0.25, 0.25});
  EXPECT_EQ(spatial_attention_loss(uniform, CoarseMask(4, 1)).item(), 0.0);
  EXPECT_NEAR(spatial_attention_loss(uniform, CoarseMask{1, 0, 0, 1}).item(), 0.125, 1e-12);
  EXPECT_NEAR(spatial_attention_loss(vec({0, 1, 0, 0}), CoarseMask{1, 0, 0, 1}).item(), 1.0, 1e-12);
  EXPECT_THROW(spatial_attention_loss(uniform, CoarseMask(3, 0)), ShapeError);
}

TEST(SpatialLoss, RowsShareTheMask) {
  const auto rows = TD::constant({2, 4}, {0.25, 0.25, 0.25, 0.25, 0, 1, 0, 0});
  EXPECT_NEAR(spatial_attention_loss(rows, CoarseMask{1, 0, 0, 1}).item(), 1.125, 1e-12);
}

TEST(TemporalLoss, Examples) {
  EXPECT_NEAR(temporal_attention_loss(vec({0.25, 0.25, 0.25, 0.25}), 0, 2).item(), 1.125, 1e-12);
  EXPECT_NEAR(temporal_attention_loss(vec({0.5, 0, 0.5, 0}), 0, 2).item(), 0.5, 1e-12);
  EXPECT_NEAR(temporal_attention_loss(vec({0.5, 0.5}), 0, 1).item(), 0.5, 1e-12);
  // ES before ED gives the same target set.
  EXPECT_NEAR(temporal_attention_loss(vec({0.5, 0, 0.5, 0}), 2, 0).item(), 0.5, 1e-12);
  EXPECT_THROW(temporal_attention_loss(vec({0.5, 0.5}), 0, 2), ConfigError);
}

TEST(TemporalLoss, TwoFrameMinimumOnTheSimplex) {
  // (a - 1)² + ((1 - a) - 1)² over a grid; the minimum sits at a = 0.5.
  double best = 1e9, best_a = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    const double a = i / 1000.0;
    const double v = temporal_attention_loss(vec({a, 1.0 - a}), 0, 1).item();
    if (v < best) best = v, best_a = a;
  }
  EXPECT_NEAR(best, 0.5, 1e-12);
  EXPECT_NEAR(best_a, 0.5, 1e-12);
}

TEST(TemporalLoss, IntervalMode) {
  EXPECT_EQ(temporal_targets(8, 5, 1, TemporalMode::interval), (std::vector<std::size_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(temporal_targets(8, 5, 1, TemporalMode::frames), (std::vector<std::size_t>{1, 5}));
  EXPECT_EQ(temporal_targets(8, 3, 3, TemporalMode::frames), (std::vector<std::size_t>{3}));
  // uniform over 4, interval [0, 2]: 3·(0.75)²
  EXPECT_NEAR(temporal_attention_loss(vec({0.25, 0.25, 0.25, 0.25}), 0, 2, TemporalMode::interval).item(), 1.6875,
              1e-12);
  EXPECT_EQ(parse_temporal_mode("interval"), TemporalMode::interval);
  EXPECT_EQ(temporal_mode_name(TemporalMode::frames), "frames");
  EXPECT_THROW(parse_temporal_mode("range"), ConfigError);
}

TEST(Losses, MatchLoopReferenceOnRandomInputs) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 20;
    const auto a = random_simplex(n, rng);
    CoarseMask m(n);
    for (auto& b : m) b = rng() % 2;
    const double s = spatial_attention_loss(vec(a), m).item();
    EXPECT_NEAR(s, spatial_ref(a, m), 1e-12);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0 + 1e-12);
    const std::size_t ed = rng() % n, es = rng() % n;
    for (auto mode : {TemporalMode::frames, TemporalMode::interval}) {
      const double t = temporal_attention_loss(vec(a), ed, es, mode).item();
      EXPECT_NEAR(t, temporal_ref(a, temporal_targets(n, ed, es, mode)), 1e-12);
      EXPECT_GE(t, 0.0);
    }
  }
}

TEST(Losses, SpatialIsZeroExactlyWhenMassIsInside) {
  const CoarseMask m{0, 1, 1, 0};
  EXPECT_EQ(spatial_attention_loss(vec({0, 0.3, 0.7, 0}), m).item(), 0.0);
  EXPECT_GT(spatial_attention_loss(vec({1e-3, 0.3, 0.699, 0}), m).item(), 0.0);
}

TEST(Losses, TemporalDecreasesAsMassMovesToTargets) {
  // Targets {0, 2} keep a 1:1 ratio while their share grows.
  double previous = 1e9;
  for (int i = 0; i <= 10; ++i) {
    const double share = i / 10.0;
    const double loss =
        temporal_attention_loss(vec({share / 2, (1 - share) / 2, share / 2, (1 - share) / 2}), 0, 2).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
}

TEST(TotalLoss, ComposesAndScalesLinearly) {
  const auto r = fake_result(2, 4, 4, 3);
  const std::vector<VideoTarget> targets{{CoarseMask{1, 0, 0, 1}, 0, 2}, {CoarseMask{0, 1, 1, 1}, 3, 1}};
  const AttnLossWeights base{1.0, 1.0};
  const auto l = total_attention_loss(r, targets, base);

  double spatial = 0.0, temporal = 0.0;
  const auto sv = r.spatial_attention.to_vector(), tv = r.temporal_attention.to_vector();
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t t = 0; t < 4; ++t)
      spatial += spatial_ref({sv.begin() + (k * 4 + t) * 4, sv.begin() + (k * 4 + t + 1) * 4}, targets[k].union_mask);
    temporal += temporal_ref({tv.begin() + k * 4, tv.begin() + (k + 1) * 4},
                             temporal_targets(4, targets[k].ed, targets[k].es, TemporalMode::frames));
  }
  EXPECT_NEAR(l.spatial.item(), spatial, 1e-12);
  EXPECT_NEAR(l.temporal.item(), temporal, 1e-12);
  EXPECT_NEAR(l.total.item(), spatial + temporal, 1e-12);

  EXPECT_NEAR(total_attention_loss(r, targets, {0.5, 0.0}).total.item(), 0.5 * temporal, 1e-12);
  EXPECT_NEAR(total_attention_loss(r, targets, {0.0, 0.4}).total.item(), 0.4 * spatial, 1e-12);
  EXPECT_NEAR(total_attention_loss(r, targets, {0.0, 0.8}).total.item(), 0.8 * spatial, 1e-12);
  EXPECT_EQ(total_attention_loss(r, {}, base).total.item(), 0.0);
  EXPECT_THROW(total_attention_loss(r, {targets[0]}, base), ShapeError);
}

TEST(TotalLoss, SingleSupervisedFrame) {
  const auto r = fake_result(1, 1, 4, 4);
  const std::vector<VideoTarget> targets{{CoarseMask{1, 0, 0, 0}, 0, 0}};
  const auto l = total_attention_loss(r, targets, {0.3, 0.7});
  const double s = spatial_attention_loss(r.spatial_attention, targets[0].union_mask).item();
  const double t = temporal_attention_loss(reshape(r.temporal_attention, {1}), 0, 0).item();
  EXPECT_NEAR(l.total.item(), 0.7 * s + 0.3 * t, 1e-12);
}

TEST(OverallLoss, SumAndGradient) {
  EXPECT_EQ(overall_loss(TD::scalar(0.0), TD::scalar(0.0)).item(), 0.0);
  EXPECT_EQ(overall_loss(TD::scalar(0.7), TD::scalar(0.0)).item(), 0.7);

  ParameterStore<double> p;
  p.add("a", {4}, {0.3, -0.2, 0.5, 1.1});
  const CoarseMask m{1, 0, 0, 1};
  auto loss = [&](Binding<double>& b) {
    const auto attn = softmax(b("a"), 0);
    return overall_loss(sum(square(b("a"))),
                        add(spatial_attention_loss(attn, m), temporal_attention_loss(attn, 1, 3)));
  };
  EXPECT_TRUE(grad_check(loss, p).passed);

  // d(total)/da equals the sum of the component gradients.
  Binding<double> whole(p), task(p), attn(p);
  loss(whole).backward();
  sum(square(task("a"))).backward();
  const auto sa = softmax(attn("a"), 0);
  add(spatial_attention_loss(sa, m), temporal_attention_loss(sa, 1, 3)).backward();
  const auto g = whole.gradients().at("a"), g1 = task.gradients().at("a"), g2 = attn.gradients().at("a");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g[i], g1[i] + g2[i], 1e-12);
}

TEST(Weights, Validation) {
  EXPECT_NO_THROW((AttnLossWeights{0.0, 1.0}.validate()));
  EXPECT_THROW((AttnLossWeights{1.5, 1.0}.validate()), ConfigError);
  EXPECT_THROW((AttnLossWeights{0.5, -0.1}.validate()), ConfigError);
}

TEST(SupervisionTargets, FromAnnotations) {
  VideoSample s;
  s.videos = 1;
  s.frames = 4;
  s.height = s.width = 4;
  s.pixels.assign(16 * 4, 0.0f);
  VideoAnnotation a;
  a.ed_mask.assign(16, 0);
  a.es_mask.assign(16, 0);
  a.ed_mask[0] = 1;
  a.es_mask[10] = 1;  // pixel (2,2), patch 3
  a.ed_index = 2;
  a.es_index = 0;
  s.annotations.push_back(a);
  const auto t = supervision_targets(s, 2);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].union_mask, (CoarseMask{1, 0, 0, 1}));
  EXPECT_EQ(t[0].ed, 2u);
  EXPECT_EQ(t[0].es, 0u);
  s.annotations.clear();
  EXPECT_TRUE(supervision_targets(s, 2).empty());
}

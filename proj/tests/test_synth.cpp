#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "gemtrans/error.hpp"
#include "gemtrans/random.hpp"
#include "gemtrans/synth.hpp"

using namespace gemtrans;

namespace {

double pixel_count(const std::vector<std::uint8_t>& m) { return std::accumulate(m.begin(), m.end(), 0.0); }

SynthConfig small(Task task) {
  SynthConfig c;
  c.task = task;
  c.seed = 5;
  c.train = 12;
  c.val = 5;
  c.test = 6;
  c.videos = 2;
  return c;
}

}  // namespace

TEST(Ellipse, ContainsAndArea) {
  const Ellipse e{10, 10, 4, 2, 0};
  EXPECT_TRUE(e.contains(13.9, 10));
  EXPECT_FALSE(e.contains(10, 12.1));
  EXPECT_NEAR(e.area(), M_PI * 8, 1e-12);
  const Ellipse r{10, 10, 4, 2, M_PI / 2};
  EXPECT_TRUE(r.contains(10, 13.9));
  EXPECT_FALSE(r.contains(13.9, 10));
  EXPECT_NEAR(e.scaled(0.5).area(), e.area() / 4, 1e-12);
}

TEST(Ellipse, CoverageIntegratesToArea) {
  const Ellipse e{16.3, 15.8, 9, 6, 0.4};
  const auto cov = coverage(e, 32, 32, 16);
  EXPECT_NEAR(std::accumulate(cov.begin(), cov.end(), 0.0) / e.area(), 1.0, 0.01);
  for (float v : cov) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(EfGeometry, NoPulsation) {
  SynthConfig c;
  std::mt19937_64 rng(1);
  auto g = draw_ef_geometry(c, rng);
  g.s_min = 1.0;
  EXPECT_EQ(g.label(), 0.0);
  const auto s = render_ef_sample(c, g, "flat", rng);
  EXPECT_EQ(*s.ef_label, 0.0);
  EXPECT_EQ(s.annotations[0].ed_index, 0u);
  EXPECT_EQ(s.annotations[0].es_index, c.frames / 2);
}

TEST(EfGeometry, HalfScaleGivesThreeQuarters) {
  EfGeometry g;
  g.s_min = 0.5;
  EXPECT_DOUBLE_EQ(g.label(), 0.75);
}

TEST(EfGeometry, ScaleHitsExtremaAtEdAndEs) {
  for (std::size_t frames : {4u, 8u, 9u, 16u}) {
    for (std::size_t ed = 0; ed < frames; ++ed) {
      EfGeometry g;
      g.s_min = 0.6;
      g.frames = frames;
      g.ed_frame = ed;
      std::size_t argmax = 0, argmin = 0;
      for (std::size_t t = 0; t < frames; ++t) {
        if (g.scale(t) > g.scale(argmax)) argmax = t;
        if (g.scale(t) < g.scale(argmin)) argmin = t;
      }
      EXPECT_EQ(argmax, ed);
      EXPECT_EQ(g.es_frame(), argmin);
      EXPECT_DOUBLE_EQ(g.scale(ed), 1.0);
      if (frames % 2 == 0) EXPECT_NEAR(g.scale(g.es_frame()), 0.6, 1e-12);
    }
  }
}

TEST(EfSample, LabelsFollowGeometryAndCoverRange) {
  SynthConfig c;
  double lo = 1.0, hi = 0.0;
  std::vector<int> bins(9, 0);
  for (std::size_t i = 0; i < 300; ++i) {
    std::mt19937_64 rng(sample_seed(c, Split::train, i));
    const auto g = draw_ef_geometry(c, rng);
    const auto s = gen_ef_sample(c, Split::train, i);
    EXPECT_DOUBLE_EQ(*s.ef_label, 1.0 - g.s_min * g.s_min);
    EXPECT_EQ(s.annotations[0].ed_index, g.ed_frame);
    EXPECT_EQ(s.annotations[0].es_index, g.es_frame());
    lo = std::min(lo, *s.ef_label);
    hi = std::max(hi, *s.ef_label);
    ++bins[std::min<std::size_t>(8, static_cast<std::size_t>((*s.ef_label - 0.05) / 0.1))];
  }
  EXPECT_GE(lo, 0.05);
  EXPECT_LE(hi, 0.95);
  for (int b : bins) EXPECT_GT(b, 15);  // expected ~33 per bin
}

TEST(EfSample, MaskAreasMatchAnalyticAreas) {
  // Pixel-centre rasterization is within 5% of the analytic area once the
  // ellipse covers at least 100 pixels at 32×32.
  SynthConfig c;
  c.videos = 2;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < 400; ++i) {
    std::mt19937_64 rng(sample_seed(c, Split::train, i));
    const auto g = draw_ef_geometry(c, rng);
    const auto s = gen_ef_sample(c, Split::train, i);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& a = s.annotations[k];
      const double ed_area = g.views[k].area(), es_area = g.views[k].scaled(g.s_min).area();
      if (ed_area >= 100.0) {
        EXPECT_NEAR(pixel_count(a.ed_mask) / ed_area, 1.0, 0.05) << s.id;
        ++checked;
      }
      if (es_area >= 100.0) EXPECT_NEAR(pixel_count(a.es_mask) / es_area, 1.0, 0.05) << s.id;
      // The ratio compounds both errors; it stays within 5% for large ES masks.
      if (es_area >= 150.0)
        EXPECT_NEAR(pixel_count(a.ed_mask) / pixel_count(a.es_mask) * g.s_min * g.s_min, 1.0, 0.05) << s.id;
    }
  }
  EXPECT_GT(checked, 600u);
}

TEST(EfSample, HalfScaleMaskRatio) {
  SynthConfig c;
  EfGeometry g;
  g.s_min = 0.5;
  g.views = {Ellipse{16, 16, 13, 11, 0.2}};
  std::mt19937_64 rng(3);
  const auto s = render_ef_sample(c, g, "half", rng);
  const double ratio = pixel_count(s.annotations[0].ed_mask) / pixel_count(s.annotations[0].es_mask);
  EXPECT_NEAR(ratio, 4.0, 0.2);
}

TEST(EfSample, NoiseNeverChangesMasks) {
  SynthConfig quiet, loud;
  quiet.noise = 0.0;
  loud.noise = 0.2;
  std::mt19937_64 r1(9), r2(9);
  const auto g = draw_ef_geometry(quiet, r1);
  r2 = r1;
  const auto a = render_ef_sample(quiet, g, "a", r1), b = render_ef_sample(loud, g, "b", r2);
  EXPECT_EQ(a.annotations[0].ed_mask, b.annotations[0].ed_mask);
  EXPECT_EQ(a.annotations[0].es_mask, b.annotations[0].es_mask);
  EXPECT_NE(a.pixels, b.pixels);
  for (float p : b.pixels) {
    EXPECT_GE(p, 0.0f);
    EXPECT_LE(p, 1.0f);
  }
}

TEST(EfSample, DegenerateConfigs) {
  SynthConfig big;
  std::mt19937_64 rng(1);
  auto g = draw_ef_geometry(big, rng);
  g.views[0].a = 40;
  EXPECT_THROW(render_ef_sample(big, g, "x", rng), ConfigError);
  SynthConfig noisy;
  noisy.noise = 0.3;
  EXPECT_THROW(noisy.validate(), ConfigError);
  SynthConfig one;
  one.frames = 1;
  EXPECT_THROW(one.validate(), ConfigError);
}

TEST(EfSample, SecondViewDiffersButSharesLabel) {
  SynthConfig c;
  c.videos = 2;
  const auto s = gen_ef_sample(c, Split::val, 4);
  ASSERT_EQ(s.annotations.size(), 2u);
  EXPECT_NE(s.annotations[0].ed_mask, s.annotations[1].ed_mask);
  EXPECT_NO_THROW(s.validate());
}

TEST(AsSample, RingIntensityMarginBetweenExtremeClasses) {
  SynthConfig c;
  c.task = Task::as;
  c.videos = 2;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    double means[2];
    for (std::size_t i = 0; i < 2; ++i) {
      const std::size_t cls = i == 0 ? 0 : 3;
      std::mt19937_64 rng(derive_seed(seed, "ring", cls));
      const auto g = draw_as_geometry(c, cls, rng);
      const auto s = render_as_sample(c, g, "ring", rng);
      double total = 0.0;
      std::size_t count = 0;
      for (std::size_t k = 0; k < c.videos; ++k)
        for (std::size_t t = 0; t < c.frames; ++t) {
          const auto f = s.frame(k, t);
          for (std::size_t y = 0; y < c.height; ++y)
            for (std::size_t x = 0; x < c.width; ++x) {
              const double r = std::hypot(x + 0.5 - g.centres[k].first, y + 0.5 - g.centres[k].second);
              if (r > g.inner && r < g.outer) total += f[y * c.width + x], ++count;
            }
        }
      ASSERT_GT(count, 0u);
      means[i] = total / static_cast<double>(count);
    }
    EXPECT_GE(means[1] - means[0], 0.3) << "seed " << seed;
  }
}

TEST(AsSample, GapNarrowsAndRingBrightensWithSeverity) {
  SynthConfig c;
  c.task = Task::as;
  std::mt19937_64 rng(4);
  std::vector<double> ratio, bright;
  for (std::size_t cls = 0; cls < 4; ++cls) {
    double r = 0, b = 0;
    for (int i = 0; i < 50; ++i) {
      const auto g = draw_as_geometry(c, cls, rng);
      r += g.inner / g.outer;
      b += g.brightness;
    }
    ratio.push_back(r);
    bright.push_back(b);
  }
  for (std::size_t cls = 1; cls < 4; ++cls) {
    EXPECT_LT(ratio[cls], ratio[cls - 1]);
    EXPECT_GT(bright[cls], bright[cls - 1]);
  }
}

TEST(AsSample, BalancedAndUnsupervised) {
  auto c = small(Task::as);
  c.train = 103;
  const auto train = make_split(c, Split::train);
  std::vector<int> counts(4, 0);
  for (const auto& s : train) {
    ++counts[*s.as_class];
    EXPECT_FALSE(s.supervised());
    EXPECT_FALSE(s.ef_label.has_value());
    EXPECT_EQ(s.as_one_hot()[*s.as_class], 1.0);
  }
  EXPECT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1);
}

TEST(Splits, DeterministicDisjointAndSized) {
  for (Task task : {Task::ef, Task::as}) {
    const auto c = small(task);
    const auto a = make_splits(c), b = make_splits(c);
    std::set<std::string> ids;
    for (Split s : {Split::train, Split::val, Split::test}) {
      ASSERT_EQ(a.split(s).size(), c.count(s));
      for (std::size_t i = 0; i < a.split(s).size(); ++i) {
        EXPECT_EQ(a.split(s)[i].pixels, b.split(s)[i].pixels);
        EXPECT_EQ(a.split(s)[i].ef_label, b.split(s)[i].ef_label);
        EXPECT_TRUE(ids.insert(a.split(s)[i].id).second);
      }
    }
    EXPECT_EQ(ids.size(), c.train + c.val + c.test);
    // Different splits draw different content at the same index.
    EXPECT_NE(a.train[0].pixels, a.val[0].pixels);
    auto other = c;
    other.seed = 6;
    EXPECT_NE(make_split(other, Split::train)[0].pixels, a.train[0].pixels);
  }
  EXPECT_EQ(sample_id(Task::ef, Split::test, 123), "ef-test-000123");
}

TEST(Dataset, ExportImportRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gemtrans_dataset_test";
  std::filesystem::remove_all(dir);
  for (Task task : {Task::ef, Task::as}) {
    auto c = small(task);
    c.train = 3;
    c.val = 2;
    c.test = 2;
    const auto data = make_splits(c);
    export_dataset(dir, data);
    EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
    const auto back = import_dataset(dir);
    for (Split s : {Split::train, Split::val, Split::test}) {
      ASSERT_EQ(back.split(s).size(), data.split(s).size());
      for (std::size_t i = 0; i < data.split(s).size(); ++i) {
        const auto &x = data.split(s)[i], &y = back.split(s)[i];
        EXPECT_EQ(x.id, y.id);
        EXPECT_EQ(x.pixels, y.pixels);
        EXPECT_EQ(x.ef_label, y.ef_label);
        EXPECT_EQ(x.as_class, y.as_class);
        ASSERT_EQ(x.annotations.size(), y.annotations.size());
        for (std::size_t k = 0; k < x.annotations.size(); ++k) {
          EXPECT_EQ(x.annotations[k].ed_mask, y.annotations[k].ed_mask);
          EXPECT_EQ(x.annotations[k].es_mask, y.annotations[k].es_mask);
          EXPECT_EQ(x.annotations[k].ed_index, y.annotations[k].ed_index);
          EXPECT_EQ(x.annotations[k].es_index, y.annotations[k].es_index);
        }
      }
    }
    std::filesystem::remove_all(dir);
  }
  EXPECT_THROW(import_dataset(dir), Error);
}

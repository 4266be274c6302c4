#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gemtrans/error.hpp"
#include "gemtrans/grad_check.hpp"
#include "gemtrans/prototype.hpp"
#include "gemtrans/random.hpp"
#include "gemtrans/synth.hpp"

using namespace gemtrans;
using TD = Tensor<double>;

namespace {

double cosine_ref(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  return ab / std::sqrt(aa * bb);
}

std::vector<double> randn(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = standard_normal(rng);
  return v;
}

// Class c tokens point along axis c, with a little noise.
std::vector<Candidates> separable_set(std::size_t per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Candidates> out;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      Candidates s;
      s.sample_id = "toy-" + std::to_string(c) + "-" + std::to_string(i);
      s.label = c;
      s.dim = 8;
      for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t d = 0; d < 8; ++d)
          s.tokens.push_back(static_cast<float>((d == c ? 1.0 : 0.0) + 0.1 * standard_normal(rng)));
        s.refs.push_back({0, j, kNoPatch});
      }
      out.push_back(std::move(s));
    }
  return out;
}

EncoderConfig tiny_encoder(const SynthConfig& data) {
  EncoderConfig c;
  c.embed_dim = 8;
  c.layers = 1;
  c.heads = 2;
  c.mlp_hidden = 16;
  c.dropout = 0.0;
  c.videos = data.videos;
  c.frames = data.frames;
  c.height = data.height;
  c.width = data.width;
  return c;
}

SynthConfig tiny_data(Task task) {
  SynthConfig d;
  d.task = task;
  d.seed = 3;
  d.train = 16;
  d.videos = 2;
  d.frames = 4;
  d.height = d.width = 16;
  return d;
}

}  // namespace

TEST(FilterTokens, Examples) {
  const auto tokens = TD::constant({3, 2}, {1, 0, 0, 1, 1, 1});
  const auto one = filter_tokens(tokens, std::vector<double>{0.1, 0.7, 0.2}, 1);
  EXPECT_EQ(one.indices, std::vector<std::size_t>{1});
  EXPECT_EQ(one.tokens.to_vector(), (std::vector<double>{0, 1}));
  const auto all = filter_tokens(tokens, std::vector<double>{0.1, 0.7, 0.2}, 3);
  EXPECT_EQ(all.indices, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(all.attention, (std::vector<double>{0.7, 0.2, 0.1}));
  const auto tie = filter_tokens(tokens, std::vector<double>(3, 1.0 / 3), 2);
  EXPECT_EQ(tie.indices, (std::vector<std::size_t>{0, 1}));
  EXPECT_THROW(filter_tokens(tokens, std::vector<double>(3, 0.3), 0), ConfigError);
  EXPECT_THROW(filter_tokens(tokens, std::vector<double>(3, 0.3), 4), ConfigError);
}

TEST(FilterTokens, KeptAttentionDominatesDiscarded) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(10);
    for (auto& x : a) x = std::floor(uniform01(rng) * 5);  // many ties
    const std::size_t m = 1 + rng() % 10;
    const auto kept = top_indices(a, m);
    ASSERT_EQ(kept.size(), m);
    double lowest_kept = 1e9;
    for (auto i : kept) lowest_kept = std::min(lowest_kept, a[i]);
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::find(kept.begin(), kept.end(), i) == kept.end()) EXPECT_LE(a[i], lowest_kept);
  }
}

TEST(Similarity, Examples) {
  const auto tokens = TD::constant({2, 3}, {1, 2, 0, 0, 0, 3});
  EXPECT_NEAR(prototype_similarity(tokens, TD::constant({1, 3}, {2, 4, 0})).item(), 1.0, 1e-9);
  EXPECT_NEAR(prototype_similarity(tokens, TD::constant({1, 3}, {-2, 1, 0})).item(), 0.0, 1e-9);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto t = randn(6, seed), p = randn(3, seed + 100);
    const double expected = std::max(cosine_ref(std::span(t).subspan(0, 3), p), cosine_ref(std::span(t).subspan(3), p));
    EXPECT_NEAR(prototype_similarity(TD::constant({2, 3}, t), TD::constant({1, 3}, p)).item(), expected, 1e-9);
  }
}

TEST(Similarity, BoundedAndMonotoneInTokens) {
  const auto protos = TD::constant({5, 4}, randn(20, 1));
  const auto t = randn(24, 2);
  std::vector<double> previous(5, -2.0);
  for (std::size_t m = 1; m <= 6; ++m) {
    const auto s = prototype_similarity(TD::constant({m, 4}, {t.begin(), t.begin() + m * 4}), protos).to_vector();
    for (std::size_t p = 0; p < 5; ++p) {
      EXPECT_GE(s[p], -1.0 - 1e-9);
      EXPECT_LE(s[p], 1.0 + 1e-9);
      EXPECT_GE(s[p], previous[p]);
    }
    previous = s;
  }
}

TEST(Similarity, DiscardedTokensHaveNoInfluence) {
  auto t = randn(5 * 4, 3);
  const std::vector<double> attn{0.1, 0.4, 0.05, 0.3, 0.15};
  const auto protos = TD::constant({3, 4}, randn(12, 4));
  auto score = [&](const std::vector<double>& tokens) {
    return prototype_similarity(filter_tokens(TD::constant({5, 4}, tokens), attn, 2).tokens, protos).to_vector();
  };
  const auto before = score(t);
  for (std::size_t i : {0u, 2u, 4u})
    for (std::size_t d = 0; d < 4; ++d) t[i * 4 + d] += 3.0;
  EXPECT_EQ(score(t), before);
  t[1 * 4] += 1.0;  // a kept token
  EXPECT_NE(score(t), before);
}

TEST(Readout, Examples) {
  const auto s = TD::constant({8}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
  EXPECT_EQ(proto_logits(s, TD::zeros({8, 4}), TD::zeros({4})).to_vector(), std::vector<double>(4, 0.0));
  std::vector<double> own(32, 0.0);
  for (std::size_t p = 0; p < 8; ++p) own[p * 4 + p / 2] = 1.0;
  const auto logits = proto_logits(s, TD::constant({8, 4}, own), TD::zeros({4})).to_vector();
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(logits[c], s[2 * c] + s[2 * c + 1], 1e-12);
}

TEST(Readout, GradientMatchesFiniteDifferences) {
  ParameterStore<double> p;
  p.add("protos", {4, 3}, randn(12, 5));
  p.add("weight", {4, 2}, randn(8, 6));
  p.add("bias", {2}, {0.1, -0.2});
  const auto tokens = TD::constant({3, 3}, randn(9, 7));
  const auto report = grad_check(
      [&](Binding<double>& b) {
        const std::size_t label = 1;
        const auto logits = proto_logits(prototype_similarity(tokens, b("protos")), b("weight"), b("bias"));
        return cross_entropy_with_logits(reshape(logits, {1, 2}), std::span(&label, 1));
      },
      p);
  EXPECT_TRUE(report.passed) << report.max_rel_error << " at " << report.worst_path;
}

TEST(Bank, SeparableToySetReachesFullTrainAccuracy) {
  const auto train = separable_set(6, 1);
  auto bank = init_bank(ProtoLevel::temporal, 4, 2, train, 2);
  ProtoConfig cfg;
  cfg.steps = 200;
  cfg.batch_size = 8;
  const auto report = train_bank(bank, train, cfg, 3);
  EXPECT_EQ(report.train_accuracy, 1.0);
  EXPECT_LT(report.losses.back(), report.losses.front());
  for (const auto& s : train) {
    const auto p = proto_probabilities(bank, s);
    EXPECT_EQ(static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()), s.label);
  }
}

TEST(Bank, InitialisationDrawsClassTokens) {
  const auto train = separable_set(3, 4);
  const auto bank = init_bank(ProtoLevel::temporal, 4, 2, train, 9);
  const auto& protos = bank.params.at("proto.temporal.prototypes");
  for (std::size_t p = 0; p < bank.count(); ++p) {
    const std::span<const float> v(protos.values.data() + p * 8, 8);
    bool found = false;
    for (const auto& s : train)
      for (std::size_t i = 0; i < s.count() && s.label == p / 2; ++i)
        found |= std::equal(v.begin(), v.end(), s.token(i).begin());
    EXPECT_TRUE(found) << p;
  }
  EXPECT_EQ(bank.params.at("proto.temporal.readout.weight").values[0], 1.0f);
  EXPECT_EQ(bank.params.at("proto.temporal.readout.weight").values[1], -0.5f);
}

TEST(Projection, CopiedPrototypeProjectsToItsToken) {
  const auto train = separable_set(3, 5);
  auto bank = init_bank(ProtoLevel::temporal, 4, 1, train, 1);
  auto& protos = bank.params.at("proto.temporal.prototypes").values;
  const auto& source = train[7];  // class 2
  std::copy_n(source.token(1).begin(), 8, protos.begin() + 2 * 8);
  project_prototypes(bank, train);
  ASSERT_EQ(bank.projection.size(), 4u);
  EXPECT_EQ(bank.projection[2].sample_id, source.sample_id);
  EXPECT_EQ(bank.projection[2].ref.frame, 1u);
  EXPECT_NEAR(bank.projection[2].similarity, 1.0, 1e-9);
}

TEST(Projection, BeatsEveryCandidateToken) {
  const auto train = separable_set(4, 6);
  auto bank = init_bank(ProtoLevel::temporal, 4, 2, train, 2);
  ProtoConfig cfg;
  cfg.steps = 30;
  train_bank(bank, train, cfg, 1);
  project_prototypes(bank, train);
  const auto& protos = bank.params.at("proto.temporal.prototypes").values;
  for (std::size_t p = 0; p < bank.count(); ++p) {
    const std::vector<double> pv(protos.begin() + p * 8, protos.begin() + (p + 1) * 8);
    for (const auto& s : train)
      for (std::size_t i = 0; i < s.count(); ++i) {
        const std::vector<double> tv(s.token(i).begin(), s.token(i).end());
        EXPECT_GE(bank.projection[p].similarity, cosine_ref(pv, tv) - 1e-9);
      }
  }
}

TEST(Projection, LevelContract) {
  const auto data = tiny_data(Task::as);
  const auto enc = tiny_encoder(data);
  const auto backbone = init_parameters<float>(enc, 1);
  const auto sample = gen_as_sample(data, Split::train, 0);
  ProtoConfig cfg;
  const auto temporal = extract_candidates(enc, backbone, sample, Task::as, ProtoLevel::temporal, cfg, 0);
  EXPECT_EQ(temporal.count(), 2 * cfg.keep(ProtoLevel::temporal, 4));
  for (const auto& r : temporal.refs) {
    EXPECT_EQ(r.patch, kNoPatch);
    EXPECT_LT(r.frame, 4u);
  }
  const auto spatial = extract_candidates(enc, backbone, sample, Task::as, ProtoLevel::spatial, cfg, 0);
  EXPECT_EQ(spatial.count(), 2 * 4 * cfg.keep(ProtoLevel::spatial, 4));
  for (const auto& r : spatial.refs) EXPECT_LT(r.patch, 4u);

  auto bank = init_bank(ProtoLevel::temporal, 4, 1, {temporal}, 1);
  project_prototypes(bank, {temporal});
  const auto table = bank.projection_json();
  ASSERT_EQ(table.size(), 4u);
  for (const auto& [id, entry] : table.items()) {
    EXPECT_TRUE(entry["s"].is_null());
    EXPECT_TRUE(entry["t"].is_number_unsigned());
  }
}

TEST(Quartiles, EdgesAndClasses) {
  const auto edges = quartile_edges({0.1, 0.2, 0.3, 0.4, 0.5});
  ASSERT_EQ(edges.size(), 3u);
  EXPECT_NEAR(edges[0], 0.2, 1e-12);
  EXPECT_NEAR(edges[1], 0.3, 1e-12);
  EXPECT_NEAR(edges[2], 0.4, 1e-12);
  EXPECT_EQ(quartile_class(0.05, edges), 0u);
  EXPECT_EQ(quartile_class(0.2, edges), 1u);
  EXPECT_EQ(quartile_class(0.35, edges), 2u);
  EXPECT_EQ(quartile_class(0.9, edges), 3u);
}

TEST(FitBranch, BackboneStaysFrozen) {
  const auto data = tiny_data(Task::as);
  const auto enc = tiny_encoder(data);
  const auto backbone = init_parameters<float>(enc, 2);
  const auto train = make_split(data, Split::train);
  const auto probe = gen_as_sample(data, Split::test, 1);
  auto predict = [&] {
    Binding<float> b(backbone, false);
    ForwardPass<float> pass(enc, b);
    return pass.run(probe, Task::as).prediction.to_vector();
  };
  const auto checksum = backbone.checksum();
  const auto copy = backbone;
  const auto before = predict();
  ProtoConfig cfg;
  cfg.steps = 40;
  cfg.batch_size = 16;  // the whole split, so each step sees every sample
  for (auto level : {ProtoLevel::spatial, ProtoLevel::temporal}) {
    const auto fit = fit_prototype_branch(enc, backbone, Task::as, train, level, cfg, 4);
    EXPECT_EQ(fit.bank.level, level);
    EXPECT_EQ(fit.bank.projection.size(), 16u);
    // Full-batch losses: the first step already lowers the training loss.
    EXPECT_LT(fit.report.losses[1], fit.report.losses[0]);
    EXPECT_LT(fit.report.losses.back(), fit.report.losses[0]);
  }
  EXPECT_EQ(backbone.checksum(), checksum);
  EXPECT_EQ(backbone, copy);
  EXPECT_EQ(predict(), before);
}

TEST(FitBranch, EfUsesQuartileClasses) {
  auto data = tiny_data(Task::ef);
  data.videos = 1;
  const auto enc = tiny_encoder(data);
  const auto backbone = init_parameters<float>(enc, 3);
  const auto train = make_split(data, Split::train);
  ProtoConfig cfg;
  cfg.steps = 5;
  const auto fit = fit_prototype_branch(enc, backbone, Task::ef, train, ProtoLevel::temporal, cfg, 1);
  ASSERT_EQ(fit.edges.size(), 3u);
  const auto labels = proto_labels(train, Task::ef, fit.edges);
  std::vector<int> counts(4, 0);
  for (auto l : labels) ++counts[l];
  for (int c : counts) EXPECT_EQ(c, 4);
}

TEST(Bank, StoreRoundTrip) {
  const auto train = separable_set(2, 7);
  const auto bank = init_bank(ProtoLevel::spatial, 4, 2, train, 3);
  ParameterStore<float> store;
  for (const auto& [path, p] : bank.params) store.add(path, p.shape, p.values);
  const auto back = bank_from_store(store, ProtoLevel::spatial);
  EXPECT_EQ(back.per_class, 2u);
  EXPECT_EQ(back.classes, 4u);
  EXPECT_EQ(back.params, bank.params);
  EXPECT_THROW(bank_from_store(store, ProtoLevel::temporal), Error);
}

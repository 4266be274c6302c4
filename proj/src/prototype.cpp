#include "gemtrans/prototype.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "gemtrans/adam.hpp"
#include "gemtrans/error.hpp"
#include "gemtrans/random.hpp"

namespace gemtrans {

namespace {

constexpr float kNormEps = 1e-12f;

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return dot / std::sqrt((na + kNormEps) * (nb + kNormEps));
}

Tensor<float> candidate_tensor(const Candidates& c) {
  return Tensor<float>::constant({c.count(), c.dim}, c.tokens);
}

Tensor<float> bank_logits(const PrototypeBank& bank, Binding<float>& b, const Candidates& c) {
  const auto s = prototype_similarity(candidate_tensor(c), b(bank.path("prototypes")));
  return proto_logits(s, b(bank.path("readout.weight")), b(bank.path("readout.bias")));
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::string_view proto_level_name(ProtoLevel level) {
  return level == ProtoLevel::spatial ? "spatial" : "temporal";
}

std::size_t ProtoConfig::keep(ProtoLevel level, std::size_t n) const {
  const double fraction = level == ProtoLevel::spatial ? spatial_keep : temporal_keep;
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))), 1, n);
}

void ProtoConfig::validate() const {
  if (spatial_per_class == 0 || temporal_per_class == 0) throw ConfigError("prototype counts must be positive");
  if (!(spatial_keep > 0.0 && spatial_keep <= 1.0)) throw ConfigError("proto.spatial_keep must be in (0, 1]");
  if (!(temporal_keep > 0.0 && temporal_keep <= 1.0)) throw ConfigError("proto.temporal_keep must be in (0, 1]");
  if (batch_size == 0) throw ConfigError("proto.batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("proto.lr must be positive");
}

std::vector<std::size_t> top_indices(std::span<const double> attention, std::size_t m) {
  if (m < 1 || m > attention.size())
    throw ConfigError("cannot keep " + std::to_string(m) + " of " + std::to_string(attention.size()) + " tokens");
  std::vector<std::size_t> order(attention.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return attention[a] > attention[b]; });
  order.resize(m);
  return order;
}

template <typename T>
FilteredTokens<T> filter_tokens(const Tensor<T>& tokens, std::span<const double> attention, std::size_t m) {
  if (tokens.rank() != 2 || tokens.dim(0) != attention.size())
    throw ShapeError("filter_tokens: tokens " + shape_str(tokens.shape()) + " vs " +
                     std::to_string(attention.size()) + " attention values");
  FilteredTokens<T> out;
  out.indices = top_indices(attention, m);
  for (auto i : out.indices) out.attention.push_back(attention[i]);
  out.tokens = embedding(tokens, std::span<const std::size_t>(out.indices));
  return out;
}

template <typename T>
Tensor<T> prototype_similarity(const Tensor<T>& tokens, const Tensor<T>& prototypes) {
  if (tokens.rank() != 2 || prototypes.rank() != 2 || tokens.dim(1) != prototypes.dim(1))
    throw ShapeError("prototype_similarity: tokens " + shape_str(tokens.shape()) + " vs prototypes " +
                     shape_str(prototypes.shape()));
  const auto cos = matmul(l2_normalize(prototypes, T(kNormEps)), transpose(l2_normalize(tokens, T(kNormEps))));
  return max(cos, 1);
}

template <typename T>
Tensor<T> proto_logits(const Tensor<T>& s, const Tensor<T>& weight, const Tensor<T>& bias) {
  const auto out = linear(reshape(s, {1, s.numel()}), weight, bias);
  return reshape(out, {out.numel()});
}

Candidates extract_candidates(const EncoderConfig& config, const ParameterStore<float>& backbone,
                              const VideoSample& sample, Task task, ProtoLevel level, const ProtoConfig& proto,
                              std::size_t label) {
  Binding<float> frozen(backbone, false);
  ForwardPass<float> pass(config, frozen);
  const auto r = pass.run(sample, task);
  const auto record = r.record();
  const std::size_t d = config.embed_dim;

  Candidates c;
  c.sample_id = sample.id;
  c.label = label;
  c.dim = d;
  auto take = [&](std::span<const float> rows, std::size_t i, TokenRef ref) {
    c.tokens.insert(c.tokens.end(), rows.begin() + static_cast<std::ptrdiff_t>(i * d),
                    rows.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    c.refs.push_back(ref);
  };
  if (level == ProtoLevel::spatial) {
    const std::size_t n = record.patches;
    const std::size_t m = proto.keep(level, n);
    const auto all = r.patch_tokens.data();
    for (std::size_t f = 0; f < record.spatial.size(); ++f) {
      const auto frame = all.subspan(f * n * d, n * d);
      for (auto s : top_indices(record.spatial[f], m)) take(frame, s, {f / record.frames, f % record.frames, s});
    }
  } else {
    const std::size_t m = proto.keep(level, record.frames);
    const auto all = r.frame_tokens.data();
    for (std::size_t k = 0; k < record.videos; ++k) {
      const auto video = all.subspan(k * record.frames * d, record.frames * d);
      for (auto t : top_indices(record.temporal[k], m)) take(video, t, {k, t, kNoPatch});
    }
  }
  return c;
}

std::vector<double> quartile_edges(std::vector<double> labels) {
  if (labels.empty()) throw ConfigError("quartile edges need at least one label");
  std::sort(labels.begin(), labels.end());
  std::vector<double> edges;
  for (std::size_t q = 1; q < kSeverityClasses; ++q) {
    // Linear interpolation between order statistics.
    const double pos = static_cast<double>(q) / kSeverityClasses * static_cast<double>(labels.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, labels.size() - 1);
    edges.push_back(labels[lo] + (pos - static_cast<double>(lo)) * (labels[hi] - labels[lo]));
  }
  return edges;
}

std::size_t quartile_class(double label, const std::vector<double>& edges) {
  return static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), label) - edges.begin());
}

std::vector<std::size_t> proto_labels(const std::vector<VideoSample>& samples, Task task,
                                      const std::vector<double>& edges) {
  std::vector<std::size_t> out;
  for (const auto& s : samples) {
    if (task == Task::as) {
      if (!s.as_class) throw ConfigError("sample '" + s.id + "' has no AS label");
      out.push_back(*s.as_class);
    } else {
      if (!s.ef_label) throw ConfigError("sample '" + s.id + "' has no EF label");
      out.push_back(quartile_class(*s.ef_label, edges));
    }
  }
  return out;
}

std::string PrototypeBank::path(std::string_view leaf) const {
  return "proto." + std::string(proto_level_name(level)) + "." + std::string(leaf);
}

nlohmann::json PrototypeBank::projection_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t i = 0; i < projection.size(); ++i) {
    const auto& e = projection[i];
    nlohmann::json entry{{"sample_id", e.sample_id}, {"k", e.ref.video}, {"t", e.ref.frame},
                         {"class", i / per_class}, {"similarity", e.similarity}};
    entry["s"] = e.ref.patch == kNoPatch ? nlohmann::json(nullptr) : nlohmann::json(e.ref.patch);
    out[std::to_string(i)] = std::move(entry);
  }
  return out;
}

std::vector<ParamSpec> proto_layout(ProtoLevel level, std::size_t classes, std::size_t per_class, std::size_t dim) {
  const std::string prefix = "proto." + std::string(proto_level_name(level)) + ".";
  const std::size_t p = classes * per_class;
  return {{prefix + "prototypes", {p, dim}}, {prefix + "readout.bias", {classes}}, {prefix + "readout.weight", {p, classes}}};
}

PrototypeBank init_bank(ProtoLevel level, std::size_t classes, std::size_t per_class,
                        const std::vector<Candidates>& train, std::uint64_t seed) {
  if (train.empty()) throw ConfigError("prototype training needs at least one sample");
  PrototypeBank bank;
  bank.level = level;
  bank.classes = classes;
  bank.per_class = per_class;
  bank.dim = train.front().dim;

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].label >= classes) throw ConfigError("prototype label out of range");
    by_class[train[i].label].push_back(i);
  }
  std::mt19937_64 rng(derive_seed(seed, proto_level_name(level)));
  std::vector<float> protos;
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& pool = by_class[c].empty() ? std::vector<std::size_t>{0} : by_class[c];
    for (std::size_t b = 0; b < per_class; ++b) {
      const auto& sample = train[pool[static_cast<std::size_t>(uniform01(rng) * pool.size()) % pool.size()]];
      const auto tok = sample.token(static_cast<std::size_t>(uniform01(rng) * sample.count()) % sample.count());
      protos.insert(protos.end(), tok.begin(), tok.end());
    }
  }
  std::vector<float> readout(bank.count() * classes);
  for (std::size_t p = 0; p < bank.count(); ++p)
    for (std::size_t c = 0; c < classes; ++c) readout[p * classes + c] = p / per_class == c ? 1.0f : -0.5f;
  bank.params.add(bank.path("prototypes"), {bank.count(), bank.dim}, std::move(protos));
  bank.params.add(bank.path("readout.weight"), {bank.count(), classes}, std::move(readout));
  bank.params.add(bank.path("readout.bias"), {classes}, std::vector<float>(classes, 0.0f));
  return bank;
}

PrototypeBank bank_from_store(const ParameterStore<float>& store, ProtoLevel level) {
  PrototypeBank bank;
  bank.level = level;
  const auto& protos = store.at(bank.path("prototypes"));
  const auto& weight = store.at(bank.path("readout.weight"));
  if (protos.shape.size() != 2 || weight.shape.size() != 2 || weight.shape[0] != protos.shape[0])
    throw CheckpointError("inconsistent prototype bank in checkpoint");
  bank.classes = weight.shape[1];
  bank.dim = protos.shape[1];
  if (bank.classes == 0 || protos.shape[0] % bank.classes != 0)
    throw CheckpointError("prototype count is not a multiple of the class count");
  bank.per_class = protos.shape[0] / bank.classes;
  for (const auto& spec : proto_layout(level, bank.classes, bank.per_class, bank.dim)) {
    const auto& p = store.at(spec.path);
    if (p.shape != spec.shape) throw CheckpointError("shape mismatch for '" + spec.path + "'");
    bank.params.add(spec.path, p.shape, p.values);
  }
  return bank;
}

std::vector<double> proto_similarities(const PrototypeBank& bank, const Candidates& sample) {
  const auto& protos = bank.params.at(bank.path("prototypes")).values;
  std::vector<double> out(bank.count(), -1.0);
  for (std::size_t p = 0; p < bank.count(); ++p) {
    const std::span<const float> proto(protos.data() + p * bank.dim, bank.dim);
    for (std::size_t i = 0; i < sample.count(); ++i) out[p] = std::max(out[p], cosine(proto, sample.token(i)));
  }
  return out;
}

std::vector<double> proto_probabilities(const PrototypeBank& bank, const Candidates& sample) {
  Binding<float> b(bank.params, false);
  const auto probs = softmax(bank_logits(bank, b, sample), 0);
  return {probs.data().begin(), probs.data().end()};
}

ProtoTrainReport train_bank(PrototypeBank& bank, const std::vector<Candidates>& train, const ProtoConfig& config,
                            std::uint64_t seed) {
  config.validate();
  if (train.empty()) throw ConfigError("prototype training needs at least one sample");
  ProtoTrainReport report;
  Adam<float> adam(AdamOptions{.lr = config.lr});
  std::mt19937_64 rng(derive_seed(seed, "proto-batches"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < std::min(config.batch_size, train.size())) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    Binding<float> b(bank.params);
    std::vector<Tensor<float>> rows;
    std::vector<std::size_t> labels;
    for (auto i : batch) {
      rows.push_back(reshape(bank_logits(bank, b, train[i]), {1, bank.classes}));
      labels.push_back(train[i].label);
    }
    const auto loss = cross_entropy_with_logits(concat(rows, 0), labels);
    loss.backward();
    report.losses.push_back(loss.item());
    adam.step(bank.params, b.gradients());
  }
  std::size_t correct = 0;
  for (const auto& c : train) correct += argmax(proto_probabilities(bank, c)) == c.label;
  report.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
  return report;
}

void project_prototypes(PrototypeBank& bank, const std::vector<Candidates>& train) {
  const auto& protos = bank.params.at(bank.path("prototypes")).values;
  bank.projection.assign(bank.count(), {});
  for (std::size_t p = 0; p < bank.count(); ++p) {
    const std::span<const float> proto(protos.data() + p * bank.dim, bank.dim);
    double best = -2.0;
    for (const auto& c : train) {
      for (std::size_t i = 0; i < c.count(); ++i) {
        const double s = cosine(proto, c.token(i));
        if (s > best) {
          best = s;
          bank.projection[p] = {c.sample_id, c.refs[i], s};
        }
      }
    }
  }
}

ProtoFit fit_prototype_branch(const EncoderConfig& config, const ParameterStore<float>& backbone, Task task,
                              const std::vector<VideoSample>& train, ProtoLevel level, const ProtoConfig& proto,
                              std::uint64_t seed) {
  proto.validate();
  const auto before = backbone.checksum();
  ProtoFit fit;
  if (task == Task::ef) {
    std::vector<double> labels;
    for (const auto& s : train) labels.push_back(s.ef_label.value_or(0.0));
    fit.edges = quartile_edges(std::move(labels));
  }
  const auto labels = proto_labels(train, task, fit.edges);
  fit.train.resize(train.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < train.size(); ++i)
    fit.train[i] = extract_candidates(config, backbone, train[i], task, level, proto, labels[i]);
  fit.bank = init_bank(level, kSeverityClasses, proto.per_class(level), fit.train, seed);
  fit.report = train_bank(fit.bank, fit.train, proto, seed);
  project_prototypes(fit.bank, fit.train);
  if (backbone.checksum() != before) throw ContractViolation("backbone parameters changed during prototype training");
  return fit;
}

#define GEMTRANS_INSTANTIATE_PROTO(T)                                                                          \
  template FilteredTokens<T> filter_tokens<T>(const Tensor<T>&, std::span<const double>, std::size_t);           \
  template Tensor<T> prototype_similarity<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> proto_logits<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

GEMTRANS_INSTANTIATE_PROTO(float)
GEMTRANS_INSTANTIATE_PROTO(double)

#undef GEMTRANS_INSTANTIATE_PROTO

}  // namespace gemtrans

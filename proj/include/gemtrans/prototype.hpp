#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gemtrans/model.hpp"

namespace gemtrans {

enum class ProtoLevel { spatial, temporal };

std::string_view proto_level_name(ProtoLevel level);

struct ProtoConfig {
  std::size_t spatial_per_class = 4;   // B
  std::size_t temporal_per_class = 4;  // H'
  double spatial_keep = 0.25;          // M as a fraction of the patches of a frame
  double temporal_keep = 0.5;          // M' as a fraction of the frames of a video
  std::size_t steps = 300;
  std::size_t batch_size = 32;
  double lr = 1e-2;

  std::size_t per_class(ProtoLevel level) const {
    return level == ProtoLevel::spatial ? spatial_per_class : temporal_per_class;
  }
  // Number of tokens kept out of n, at least 1.
  std::size_t keep(ProtoLevel level, std::size_t n) const;
  // Throws ConfigError.
  void validate() const;
};

// Indices of the m largest attention values, ordered by rank; ties go to the
// lower index.
std::vector<std::size_t> top_indices(std::span<const double> attention, std::size_t m);

template <typename T>
struct FilteredTokens {
  Tensor<T> tokens;  // [m, d]
  std::vector<std::size_t> indices;
  std::vector<double> attention;
};

// tokens: [n, d]. Throws ConfigError unless 1 <= m <= n.
template <typename T>
FilteredTokens<T> filter_tokens(const Tensor<T>& tokens, std::span<const double> attention, std::size_t m);

// Max over the rows of `tokens` [m, d] of the cosine similarity to each
// prototype [P, d]; returns [P].
template <typename T>
Tensor<T> prototype_similarity(const Tensor<T>& tokens, const Tensor<T>& prototypes);

// s: [P] -> logits [C].
template <typename T>
Tensor<T> proto_logits(const Tensor<T>& s, const Tensor<T>& weight, const Tensor<T>& bias);

inline constexpr std::size_t kNoPatch = std::numeric_limits<std::size_t>::max();

struct TokenRef {
  std::size_t video = 0;
  std::size_t frame = 0;
  std::size_t patch = kNoPatch;  // kNoPatch for frame tokens
};

/// Attention-filtered tokens of one sample, taken from the frozen backbone.
struct Candidates {
  std::string sample_id;
  std::size_t label = 0;
  std::size_t dim = 0;
  std::vector<float> tokens;  // count × dim
  std::vector<TokenRef> refs;

  std::size_t count() const { return refs.size(); }
  std::span<const float> token(std::size_t i) const { return std::span(tokens).subspan(i * dim, dim); }
};

// Spatial: the top patches of every frame of every video. Temporal: the top
// frames of every video. Ranking uses the backbone's cls attention.
Candidates extract_candidates(const EncoderConfig& config, const ParameterStore<float>& backbone,
                              const VideoSample& sample, Task task, ProtoLevel level, const ProtoConfig& proto,
                              std::size_t label);

// EF labels go into quartile classes. Edges come from the training labels.
std::vector<double> quartile_edges(std::vector<double> labels);
std::size_t quartile_class(double label, const std::vector<double>& edges);

struct ProjectionEntry {
  std::string sample_id;
  TokenRef ref;
  double similarity = 0.0;
};

/// Prototype vectors and readout for one level, stored as "proto.<level>.*".
struct PrototypeBank {
  ProtoLevel level = ProtoLevel::spatial;
  std::size_t classes = kSeverityClasses;
  std::size_t per_class = 4;
  std::size_t dim = 0;
  ParameterStore<float> params;
  std::vector<ProjectionEntry> projection;  // one per prototype, after project_prototypes

  std::size_t count() const { return classes * per_class; }
  std::string path(std::string_view leaf) const;
  // prototype id -> {sample_id, k, t, s, similarity}
  nlohmann::json projection_json() const;
};

std::vector<ParamSpec> proto_layout(ProtoLevel level, std::size_t classes, std::size_t per_class, std::size_t dim);

// Prototype c·B + b starts as a random candidate token of a class-c sample;
// the readout starts at +1 for the own class and -0.5 for the others.
PrototypeBank init_bank(ProtoLevel level, std::size_t classes, std::size_t per_class,
                        const std::vector<Candidates>& train, std::uint64_t seed);

// Restores a bank from "proto.<level>.*" entries of a parameter store.
PrototypeBank bank_from_store(const ParameterStore<float>& store, ProtoLevel level);

std::vector<double> proto_probabilities(const PrototypeBank& bank, const Candidates& sample);
std::vector<double> proto_similarities(const PrototypeBank& bank, const Candidates& sample);

struct ProtoTrainReport {
  std::vector<double> losses;  // one per step
  double train_accuracy = 0.0;
};

// Cross-entropy on prototypes and readout only.
ProtoTrainReport train_bank(PrototypeBank& bank, const std::vector<Candidates>& train, const ProtoConfig& config,
                            std::uint64_t seed);

// Maps each prototype to its most similar candidate token (first one on ties).
void project_prototypes(PrototypeBank& bank, const std::vector<Candidates>& train);

struct ProtoFit {
  PrototypeBank bank;
  ProtoTrainReport report;
  std::vector<Candidates> train;
  std::vector<double> edges;  // EF quartile edges; empty for AS
};

// Extract, initialize, train and project. Throws ContractViolation when the
// backbone checksum changes along the way.
ProtoFit fit_prototype_branch(const EncoderConfig& config, const ParameterStore<float>& backbone, Task task,
                              const std::vector<VideoSample>& train, ProtoLevel level, const ProtoConfig& proto,
                              std::uint64_t seed);

// Class labels the prototype branch is trained on.
std::vector<std::size_t> proto_labels(const std::vector<VideoSample>& samples, Task task,
                                      const std::vector<double>& edges);

}  // namespace gemtrans

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gemtrans/checkpoint.hpp"
#include "gemtrans/ops.hpp"
#include "gemtrans/parameters.hpp"
#include "gemtrans/video.hpp"

namespace gemtrans {

// The three encoder levels: patches within a frame, frames within a video,
// videos within a sample.
enum class Level { spatial, temporal, video };

// Parameter namespace of a level: "ste", "tte" or "vte".
std::string_view level_prefix(Level level);

struct EncoderConfig {
  std::size_t patch_size = 8;
  std::size_t embed_dim = 32;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 64;
  double dropout = 0.1;
  double layernorm_eps = 1e-5;

  std::size_t videos = 1;  // K
  std::size_t frames = 8;  // T
  std::size_t height = 32;
  std::size_t width = 32;

  // Positional-embedding slots per level, cls included. 0 means tokens + 1.
  std::size_t spatial_slots = 0;
  std::size_t temporal_slots = 0;
  std::size_t video_slots = 0;

  std::size_t patches_per_frame() const { return (height / patch_size) * (width / patch_size); }
  std::size_t patch_pixels() const { return patch_size * patch_size; }
  std::size_t slots(Level level) const;

  // Throws ConfigError.
  void validate() const;
};

std::vector<ParamSpec> parameter_layout(const EncoderConfig& config);

// Truncated normal (sigma 0.02) for projections; zeros for biases; ones for
// LayerNorm gains. cls tokens and positional embeddings get sigma
// `embedding_std`: 0 for training, nonzero when a generic point is wanted
// (gradient checks), since at exactly zero some q/k gradients vanish.
// Each parameter is seeded from (seed, path), so the result does not depend
// on creation order.
template <typename T>
ParameterStore<T> init_parameters(const EncoderConfig& config, std::uint64_t seed, double embedding_std = 0.0);

/// Configuration plus parameter store of the three-level encoder and both heads.
template <typename T>
class GemTransModel {
 public:
  GemTransModel(EncoderConfig config, std::uint64_t seed);
  // Adopts `params` after checking them against the config layout. Entries
  // under "proto." are carried along untouched.
  GemTransModel(EncoderConfig config, ParameterStore<T> params);

  const EncoderConfig& config() const { return config_; }
  const ParameterStore<T>& parameters() const { return params_; }
  ParameterStore<T>& parameters() { return params_; }

 private:
  EncoderConfig config_;
  ParameterStore<T> params_;
};

// Splits an H×W frame into HW/p² row-major patches of p×p pixels each,
// returned as a flat [patches × p²] array.
std::vector<float> patchify(std::span<const float> frame, std::size_t height, std::size_t width,
                            std::size_t patch);
// Inverse of patchify.
std::vector<float> stitch(std::span<const float> patches, std::size_t height, std::size_t width,
                          std::size_t patch);

// Linear projection of flattened patches [..., p²] to tokens [..., d].
template <typename T>
Tensor<T> tokenize(const Tensor<T>& patches, Binding<T>& params);

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct EncoderOutput {
  Tensor<T> summary;        // [B, d]: final LayerNorm at the cls position
  Tensor<T> cls_attention;  // [B, n]: last layer, head-averaged, cls->cls removed
  Tensor<T> tokens;         // [B, n, d]: final LayerNorm at the input positions
};

/// Head-averaged cls attention of the last layer for every level, as plain
/// numbers. spatial[k * T + t] has one entry per patch.
struct AttentionRecord {
  std::size_t videos = 0, frames = 0, patches = 0;
  std::vector<std::vector<double>> spatial;
  std::vector<std::vector<double>> temporal;
  std::vector<double> video;
};

template <typename T>
struct ForwardResult {
  Task task = Task::ef;
  Tensor<T> prediction;  // EF: [1] in (0, 1); AS: [4] probabilities
  Tensor<T> logits;      // EF: [1]; AS: [4]
  Tensor<T> spatial_attention;   // [K·T, n]
  Tensor<T> temporal_attention;  // [K, T]
  Tensor<T> video_attention;     // [K]
  Tensor<T> frame_embeddings;    // z: [K·T, d]
  Tensor<T> video_embeddings;    // v: [K, d]
  Tensor<T> patient_embedding;   // u: [d]
  Tensor<T> patch_tokens;        // [K·T, n, d]
  Tensor<T> frame_tokens;        // [K, T, d]

  AttentionRecord record() const;
};

/// One forward evaluation over a Binding. Dropout masks are drawn from
/// `options.dropout_seed` in call order, so a pass is reproducible.
template <typename T>
class ForwardPass {
 public:
  ForwardPass(const EncoderConfig& config, Binding<T>& params, ForwardOptions options = {});

  // tokens: [B, n, d] (or [n, d], giving summary [d] and attention [n]).
  EncoderOutput<T> encode(Level level, const Tensor<T>& tokens);

  // Every frame of every video, independently, with shared weights.
  EncoderOutput<T> spatial(const VideoSample& sample);
  // frame_embeddings: [K, T, d] -> one summary per video.
  EncoderOutput<T> temporal(const Tensor<T>& frame_embeddings);
  // video_embeddings: [K, d] -> a single summary [1, d].
  EncoderOutput<T> video(const Tensor<T>& video_embeddings);

  Tensor<T> ef_logit(const Tensor<T>& u);
  Tensor<T> as_logits(const Tensor<T>& u);
  Tensor<T> ef_head(const Tensor<T>& u) { return sigmoid(ef_logit(u)); }
  Tensor<T> as_head(const Tensor<T>& u) {
    auto logits = as_logits(u);
    return softmax(logits, logits.rank() - 1);
  }

  ForwardResult<T> run(const VideoSample& sample, Task task);

 private:
  Tensor<T> attention_block(const std::string& prefix, const Tensor<T>& x, Tensor<T>* probs);
  Tensor<T> mlp_block(const std::string& prefix, const Tensor<T>& x);
  Tensor<T> maybe_dropout(const Tensor<T>& x);
  Tensor<T> ln(const std::string& prefix, const Tensor<T>& x);

  const EncoderConfig& config_;
  Binding<T>& params_;
  ForwardOptions options_;
  std::uint64_t dropout_calls_ = 0;
};

// L2 for EF, cross-entropy for AS.
template <typename T>
Tensor<T> task_loss(const ForwardResult<T>& result, const VideoSample& sample);

}  // namespace gemtrans

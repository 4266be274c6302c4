#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "gemtrans/model.hpp"

namespace gemtrans {

// One bit per patch, in patchify order.
using CoarseMask = std::vector<std::uint8_t>;

enum class TemporalMode { frames, interval };

std::string_view temporal_mode_name(TemporalMode mode);
TemporalMode parse_temporal_mode(std::string_view name);

struct AttnLossWeights {
  double lambda_temporal = 1.0;
  double lambda_spatial = 1.0;
  TemporalMode mode = TemporalMode::frames;

  // Throws ConfigError unless both weights lie in [0, 1].
  void validate() const;
};

// A patch is set when any of its pixels is set.
CoarseMask coarsen_mask(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width,
                        std::size_t patch);
CoarseMask union_masks(const CoarseMask& a, const CoarseMask& b);

// {ED, ES} in frames mode; every index between them (inclusive) in interval mode.
std::vector<std::size_t> temporal_targets(std::size_t frames, std::size_t ed, std::size_t es, TemporalMode mode);

// Sum of squared attention over patches outside the mask. `attn` is [n] or
// [F, n]; every row is scored against the same mask and the rows are summed.
template <typename T>
Tensor<T> spatial_attention_loss(const Tensor<T>& attn, const CoarseMask& inside);

// Sum over target frames of (a_t - 1)^2. `attn` is [T].
template <typename T>
Tensor<T> temporal_attention_loss(const Tensor<T>& attn, std::size_t ed, std::size_t es,
                                  TemporalMode mode = TemporalMode::frames);

/// Coarse ED∪ES mask and phase indices of one video.
struct VideoTarget {
  CoarseMask union_mask;
  std::size_t ed = 0;
  std::size_t es = 0;
};

// One entry per video; empty when the sample carries no annotations.
std::vector<VideoTarget> supervision_targets(const VideoSample& sample, std::size_t patch);

template <typename T>
struct AttentionLoss {
  Tensor<T> total;     // λt·temporal + λs·spatial
  Tensor<T> spatial;   // summed over every frame of every video
  Tensor<T> temporal;  // summed over videos
};

// Zero (and constant) for samples without supervision.
template <typename T>
AttentionLoss<T> total_attention_loss(const ForwardResult<T>& result, const std::vector<VideoTarget>& targets,
                                      const AttnLossWeights& weights);

template <typename T>
Tensor<T> overall_loss(const Tensor<T>& task, const Tensor<T>& attention) {
  return add(task, attention);
}

}  // namespace gemtrans

#pragma once

#include <span>
#include <vector>

#include "gemtrans/attn_supervision.hpp"

namespace gemtrans {

// mean |ŷ - y|
double mean_absolute_error(std::span<const double> predictions, std::span<const double> labels);
// 1 - Σ(ŷ - y)² / Σ(y - ȳ)². With constant labels: 1 if every prediction is
// exact, 0 otherwise.
double r_squared(std::span<const double> predictions, std::span<const double> labels);
// MAE of always predicting the label mean.
double constant_baseline_mae(std::span<const double> labels);

double severity_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);
// Healthy (class 0) against every other class, collapsed before matching.
double detection_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels);

// Share of attention mass on patches inside the mask.
double in_mask_fraction(std::span<const double> attention, const CoarseMask& mask);
// Attention mass on the target frames.
double target_mass(std::span<const double> attention, std::span<const std::size_t> targets);

/// Attention statistics of one sample, averaged over its frames / videos.
struct AttentionStats {
  double in_mask = 0.0;
  double phase_mass = 0.0;
};

AttentionStats attention_stats(const AttentionRecord& record, const std::vector<VideoTarget>& targets,
                               TemporalMode mode = TemporalMode::frames);

}  // namespace gemtrans

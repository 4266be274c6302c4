#include "gemtrans/metrics.hpp"

#include <cmath>

#include "gemtrans/error.hpp"

namespace gemtrans {

namespace {

void check_pair(std::size_t a, std::size_t b) {
  if (a != b) throw ShapeError(std::to_string(a) + " predictions for " + std::to_string(b) + " labels");
  if (a == 0) throw ShapeError("metrics need at least one sample");
}

double mean(std::span<const double> v) {
  double total = 0.0;
  for (double x : v) total += x;
  return total / static_cast<double>(v.size());
}

}  // namespace

double mean_absolute_error(std::span<const double> predictions, std::span<const double> labels) {
  check_pair(predictions.size(), labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) total += std::abs(predictions[i] - labels[i]);
  return total / static_cast<double>(labels.size());
}

double r_squared(std::span<const double> predictions, std::span<const double> labels) {
  check_pair(predictions.size(), labels.size());
  const double mu = mean(labels);
  double res = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    res += (predictions[i] - labels[i]) * (predictions[i] - labels[i]);
    tot += (labels[i] - mu) * (labels[i] - mu);
  }
  if (tot == 0.0) return res == 0.0 ? 1.0 : 0.0;
  return 1.0 - res / tot;
}

double constant_baseline_mae(std::span<const double> labels) {
  if (labels.empty()) throw ShapeError("metrics need at least one sample");
  const std::vector<double> constant(labels.size(), mean(labels));
  return mean_absolute_error(constant, labels);
}

double severity_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  check_pair(predicted.size(), labels.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double detection_accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
  check_pair(predicted.size(), labels.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += (predicted[i] == 0) == (labels[i] == 0);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double in_mask_fraction(std::span<const double> attention, const CoarseMask& mask) {
  if (attention.size() != mask.size()) throw ShapeError("attention length does not match the mask");
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    total += attention[i];
    if (mask[i]) inside += attention[i];
  }
  return total > 0.0 ? inside / total : 0.0;
}

double target_mass(std::span<const double> attention, std::span<const std::size_t> targets) {
  double mass = 0.0;
  for (auto t : targets) {
    if (t >= attention.size()) throw ShapeError("target frame out of range");
    mass += attention[t];
  }
  return mass;
}

AttentionStats attention_stats(const AttentionRecord& record, const std::vector<VideoTarget>& targets,
                               TemporalMode mode) {
  if (targets.size() != record.videos) throw ShapeError("supervision targets do not cover every video");
  AttentionStats stats;
  for (std::size_t k = 0; k < record.videos; ++k) {
    for (std::size_t t = 0; t < record.frames; ++t)
      stats.in_mask += in_mask_fraction(record.spatial[k * record.frames + t], targets[k].union_mask);
    stats.phase_mass +=
        target_mass(record.temporal[k], temporal_targets(record.frames, targets[k].ed, targets[k].es, mode));
  }
  stats.in_mask /= static_cast<double>(record.videos * record.frames);
  stats.phase_mass /= static_cast<double>(record.videos);
  return stats;
}

}  // namespace gemtrans

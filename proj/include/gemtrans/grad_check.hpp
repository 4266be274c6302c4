#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gemtrans/parameters.hpp"

namespace gemtrans {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-6;
  // Fault-injection hook: add `corrupt_amount` to the analytic gradient of this path.
  std::optional<std::string> corrupt_path;
  double corrupt_amount = 1.0;
};

struct ParameterCheck {
  std::string path;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;  // lexicographic by path
  double max_rel_error = 0.0;
  std::string worst_path;
  bool passed = false;
  std::size_t evaluations = 0;
};

// Builds the scalar loss for the parameters seen through the binding.
using LossFunction = std::function<Tensor<double>(Binding<double>&)>;

/// Compares reverse-mode gradients of `loss` with central differences
/// (f(θ+h) - f(θ-h)) / 2h for every scalar in `params`. Values are restored
/// afterwards. Throws OracleError when two evaluations at θ differ.
GradCheckReport grad_check(const LossFunction& loss, ParameterStore<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace gemtrans

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gemtrans/parameters.hpp"

namespace gemtrans {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled (AdamW-style) decay.
  double weight_decay = 0.0;
  // Rescale the whole gradient to this global L2 norm when it is larger; 0 disables.
  double clip_norm = 0.0;

  void validate() const;
};

/// Adam with bias correction. Moment buffers are created on the first step
/// for every parameter in the store; a parameter absent from the gradient
/// map is treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions options = {});

  // Throws NumericError naming the parameter when a gradient is not finite.
  void step(ParameterStore<T>& params, const GradientMap<T>& grads);

  std::uint64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }

 private:
  struct Moments {
    std::vector<double> first, second;
  };

  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments, std::less<>> moments_;
};

}  // namespace gemtrans

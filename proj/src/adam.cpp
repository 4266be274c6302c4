#include "gemtrans/adam.hpp"

#include <cmath>

#include "gemtrans/error.hpp"

namespace gemtrans {

void AdamOptions::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optim.beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optim.beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optim.eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be non-negative");
  if (!(clip_norm >= 0.0)) throw ConfigError("optim.clip_norm must be non-negative");
}

template <typename T>
Adam<T>::Adam(AdamOptions options) : options_(options) {
  options_.validate();
}

template <typename T>
void Adam<T>::step(ParameterStore<T>& params, const GradientMap<T>& grads) {
  // Validate before touching anything so a bad gradient leaves the state intact.
  for (const auto& [path, g] : grads) {
    if (!params.contains(path)) throw ConfigError("gradient for unknown parameter '" + path + "'");
    if (g.size() != params.at(path).values.size()) throw ShapeError("gradient shape mismatch for '" + path + "'");
    for (T v : g) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter '" + path + "'");
    }
  }

  double scale = 1.0;
  if (options_.clip_norm > 0.0) {
    double total = 0.0;
    for (const auto& [_, g] : grads)
      for (T v : g) total += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(total);
    if (norm > options_.clip_norm) scale = options_.clip_norm / norm;
  }

  ++step_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));

  for (const auto& path : params.paths()) {
    auto& p = params.at(path);
    auto [it, inserted] = moments_.try_emplace(path);
    Moments& m = it->second;
    if (inserted) {
      m.first.assign(p.values.size(), 0.0);
      m.second.assign(p.values.size(), 0.0);
    }
    const auto git = grads.find(path);
    const std::vector<T>* g = git == grads.end() ? nullptr : &git->second;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double gi = g ? scale * static_cast<double>((*g)[i]) : 0.0;
      m.first[i] = b1 * m.first[i] + (1.0 - b1) * gi;
      m.second[i] = b2 * m.second[i] + (1.0 - b2) * gi * gi;
      const double mhat = m.first[i] / correction1;
      const double vhat = m.second[i] / correction2;
      double value = static_cast<double>(p.values[i]);
      value -= options_.lr * options_.weight_decay * value;
      value -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
      p.values[i] = static_cast<T>(value);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace gemtrans

#include "gemtrans/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gemtrans/error.hpp"

namespace gemtrans {

namespace {

double evaluate(const LossFunction& loss, const ParameterStore<double>& params) {
  Binding<double> binding(params, false);
  return loss(binding).item();
}

}  // namespace

GradCheckReport grad_check(const LossFunction& loss, ParameterStore<double>& params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ConfigError("grad_check: step must be positive");

  GradCheckReport report;
  GradientMap<double> analytic;
  double base = 0.0;
  {
    Binding<double> binding(params, true);
    const auto value = loss(binding);
    base = value.item();
    value.backward();
    analytic = binding.gradients();
  }
  const double again = evaluate(loss, params);
  report.evaluations = 2;
  if (again != base) {
    std::ostringstream os;
    os.precision(17);
    os << "loss is not deterministic: " << base << " vs " << again;
    throw OracleError(os.str());
  }

  const double h = options.step;
  for (const auto& path : params.paths()) {
    auto& values = params.at(path).values;
    ParameterCheck check;
    check.path = path;
    check.count = values.size();
    const auto git = analytic.find(path);
    for (std::size_t i = 0; i < values.size(); ++i) {
      double a = git == analytic.end() ? 0.0 : git->second[i];
      if (options.corrupt_path && *options.corrupt_path == path) a += options.corrupt_amount;
      const double original = values[i];
      values[i] = original + h;
      const double plus = evaluate(loss, params);
      values[i] = original - h;
      const double minus = evaluate(loss, params);
      values[i] = original;
      report.evaluations += 2;
      const double numeric = (plus - minus) / (2.0 * h);
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = abs_err / denom;
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      if (rel > check.max_rel_error) {
        check.max_rel_error = rel;
        check.worst_index = i;
      }
    }
    if (report.worst_path.empty() || check.max_rel_error > report.max_rel_error) {
      report.max_rel_error = check.max_rel_error;
      report.worst_path = path;
    }
    report.parameters.push_back(std::move(check));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace gemtrans

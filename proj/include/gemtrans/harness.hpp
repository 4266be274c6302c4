#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemtrans/config.hpp"
#include "gemtrans/grad_check.hpp"

namespace gemtrans {

/// Predictions and metrics of one model on one list of samples.
struct EvalResult {
  Task task = Task::ef;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> predictions;  // EF: {ŷ}; AS: 4 probabilities
  double task_loss = 0.0;                        // mean over samples
  double attn_loss = 0.0;                        // mean over samples

  // EF
  double mae = 0.0, r2 = 0.0, baseline_mae = 0.0;
  // AS
  double severity = 0.0, detection = 0.0;
  // EF samples carrying masks; zero otherwise.
  double in_mask = 0.0, phase_mass = 0.0;
  std::size_t supervised = 0;

  std::vector<std::size_t> predicted_classes() const;
  nlohmann::json to_json(bool with_predictions = false) const;
};

EvalResult evaluate(const RunConfig& config, const ParameterStore<float>& params,
                    const std::vector<VideoSample>& samples);

/// Outcome of one training run on pre-generated data.
struct TrainResult {
  ParameterStore<float> best;  // best-validation backbone (+ proto.* when fitted)
  std::size_t best_step = 0;
  std::size_t steps_run = 0;
  bool stopped_early = false;
  std::vector<double> train_loss, task_loss, attn_loss;  // one per step, batch means
  nlohmann::json validation = nlohmann::json::array();
  EvalResult test;
  nlohmann::json prototypes;  // null unless fitted

  nlohmann::json report(const RunConfig& config) const;
};

// Progress lines go to `log` when given.
TrainResult train_model(const RunConfig& config, const Dataset& data, std::ostream* log = nullptr);

// Prototype banks of both levels on a trained backbone. Adds "proto.*" entries
// to `params` and returns the summary (projection tables, accuracies).
nlohmann::json fit_prototypes(const RunConfig& config, ParameterStore<float>& params, const Dataset& data);

std::filesystem::path prototype_table_path(const std::filesystem::path& checkpoint);

// Subcommands. Each writes its JSON report under config.out and returns it.
nlohmann::json cmd_train(const RunConfig& config, std::ostream* log = nullptr);
nlohmann::json cmd_eval(const RunConfig& config, Split split = Split::test);
nlohmann::json cmd_explain(const RunConfig& config, const std::vector<std::string>& sample_ids);
nlohmann::json cmd_ablate(const RunConfig& config, std::ostream* log = nullptr);

struct GradcheckRun {
  Task task = Task::ef;
  GradCheckReport report;
};

// Full EF and AS losses of the tiny double-precision model on two samples.
std::vector<GradcheckRun> run_gradcheck(const GradCheckOptions& options = {});
nlohmann::json gradcheck_json(const std::vector<GradcheckRun>& runs, const GradCheckOptions& options);

// Loads a checkpoint and checks it against the config's layout.
ParameterStore<float> load_model(const RunConfig& config, const std::filesystem::path& path);

// "ef-test-000003" -> the regenerated sample. Throws ConfigError for ids
// that do not belong to the configured task or split sizes.
VideoSample resolve_sample(const RunConfig& config, const std::string& id);

}  // namespace gemtrans

#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gemtrans/error.hpp"
#include "gemtrans/harness.hpp"

using namespace gemtrans;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--seed", c.seed, "overrides the seed key");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--checkpoint", c.checkpoint, "checkpoint path");
  cmd->add_option("--set", c.set, "extra key=value settings, applied after the file");
}

RunConfig build_config(const Common& c, std::optional<Task> forced_task = std::nullopt) {
  std::string text;
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    if (!in) throw ConfigError("cannot read config '" + c.config + "'");
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto overrides = c.set;
  if (forced_task) overrides.push_back("task=" + std::string(task_name(*forced_task)));
  auto config = parse_config(text, overrides);
  if (c.seed) config.seed = *c.seed;
  if (c.out) config.out = *c.out;
  if (c.checkpoint) config.checkpoint = *c.checkpoint;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level video transformer with attention supervision and prototypes"};
  app.require_subcommand(1);

  Common train_opts, eval_opts, explain_opts, ablate_opts;
  auto* train = app.add_subcommand("train", "train a model and write checkpoint + report");
  add_common(train, train_opts);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, eval_opts);
  std::string split = "test";
  eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));

  auto* explain = app.add_subcommand("explain", "export attention maps and prototype matches");
  add_common(explain, explain_opts);
  std::vector<std::string> ids;
  explain->add_option("--sample", ids, "sample id, e.g. ef-test-000003 (repeatable)");

  auto* ablate = app.add_subcommand("ablate", "full / no-spatial / no-temporal supervision on ef");
  add_common(ablate, ablate_opts);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full ef and as losses");
  std::optional<std::string> corrupt;
  std::string gradcheck_out;
  double tolerance = 1e-4;
  gradcheck->add_option("--corrupt", corrupt, "add 1 to the analytic gradient of this parameter (test hook)");
  gradcheck->add_option("--tolerance", tolerance, "maximum relative error");
  gradcheck->add_option("--out", gradcheck_out, "directory for gradcheck_report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    nlohmann::json report;
    if (*train) {
      const auto full = cmd_train(build_config(train_opts), &std::cerr);
      report = {{"checkpoint", full["checkpoint"]}, {"best_step", full["best_step"]}, {"steps_run", full["steps_run"]},
                {"test", full["test"]}};
      if (!full["prototypes"].is_null()) {
        for (const auto& [level, p] : full["prototypes"].items()) {
          if (!p.is_object()) continue;
          report["prototypes"][level] = {{"test_accuracy", p["test_accuracy"]},
                                         {"backbone_test_accuracy", p["backbone_test_accuracy"]}};
        }
      }
    } else if (*eval) {
      Split s = split == "train" ? Split::train : split == "val" ? Split::val : Split::test;
      report = cmd_eval(build_config(eval_opts), s);
      report.erase("predictions");
    } else if (*explain) {
      report = cmd_explain(build_config(explain_opts), ids);
    } else if (*ablate) {
      report = cmd_ablate(build_config(ablate_opts, Task::ef), &std::cerr);
    } else if (*gradcheck) {
      GradCheckOptions options;
      options.tolerance = tolerance;
      options.corrupt_path = corrupt;
      const auto runs = run_gradcheck(options);
      report = gradcheck_json(runs, options);
      if (!gradcheck_out.empty()) {
        std::filesystem::create_directories(gradcheck_out);
        std::ofstream(std::filesystem::path(gradcheck_out) / "gradcheck_report.json") << report.dump(2) << '\n';
      }
      for (const auto& run : runs) {
        std::cout << task_name(run.task) << ": max rel error " << run.report.max_rel_error << " at "
                  << run.report.worst_path << (run.report.passed ? " PASS" : " FAIL") << '\n';
        for (const auto& p : run.report.parameters)
          if (p.max_rel_error >= options.tolerance) std::cout << "  " << p.path << " " << p.max_rel_error << '\n';
      }
      return report["passed"].get<bool>() ? 0 : 2;
    }
    std::cout << report.dump(2) << '\n';
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

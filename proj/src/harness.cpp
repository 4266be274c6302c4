#include "gemtrans/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gemtrans/error.hpp"
#include "gemtrans/metrics.hpp"
#include "gemtrans/random.hpp"

namespace gemtrans {

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

void apply_threads(const RunConfig& config) {
#ifdef _OPENMP
  if (config.train.threads > 0) omp_set_num_threads(static_cast<int>(config.train.threads));
#else
  (void)config;
#endif
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Runs fn(i) for every i in parallel; the first exception (by index) is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

bool improved(Task task, const EvalResult& current, const EvalResult* best) {
  if (!best) return true;
  return task == Task::ef ? current.mae < best->mae : current.severity > best->severity;
}

double headline(const EvalResult& r) { return r.task == Task::ef ? r.mae : r.severity; }

}  // namespace

std::vector<std::size_t> EvalResult::predicted_classes() const {
  std::vector<std::size_t> out;
  for (const auto& p : predictions) out.push_back(argmax(p));
  return out;
}

nlohmann::json EvalResult::to_json(bool with_predictions) const {
  nlohmann::json j{{"task", task_name(task)}, {"samples", ids.size()}, {"task_loss", task_loss}};
  if (task == Task::ef) {
    j["mae"] = mae;
    j["r2"] = r2;
    j["baseline_mae"] = baseline_mae;
    j["attn_loss"] = attn_loss;
    j["in_mask_fraction"] = in_mask;
    j["ed_es_mass"] = phase_mass;
    j["supervised_samples"] = supervised;
  } else {
    j["severity_accuracy"] = severity;
    j["detection_accuracy"] = detection;
    j["detection_rule"] = "healthy (class 0) vs classes 1-3";
  }
  if (with_predictions) {
    nlohmann::json preds = nlohmann::json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) preds[ids[i]] = predictions[i];
    j["predictions"] = std::move(preds);
  }
  return j;
}

EvalResult evaluate(const RunConfig& config, const ParameterStore<float>& params,
                    const std::vector<VideoSample>& samples) {
  if (samples.empty()) throw ConfigError("evaluation needs at least one sample");
  const std::size_t n = samples.size();
  EvalResult r;
  r.task = config.task;
  r.predictions.resize(n);
  std::vector<double> task_losses(n), attn_losses(n);
  std::vector<std::optional<AttentionStats>> stats(n);
  parallel_for(n, [&](std::size_t i) {
    Binding<float> frozen(params, false);
    ForwardPass<float> pass(config.model, frozen);
    const auto out = pass.run(samples[i], config.task);
    const auto pred = out.prediction.data();
    r.predictions[i].assign(pred.begin(), pred.end());
    task_losses[i] = task_loss(out, samples[i]).item();
    const auto targets = supervision_targets(samples[i], config.model.patch_size);
    attn_losses[i] = total_attention_loss(out, targets, config.attn).total.item();
    if (!targets.empty()) stats[i] = attention_stats(out.record(), targets, config.attn.mode);
  });

  for (std::size_t i = 0; i < n; ++i) {
    r.ids.push_back(samples[i].id);
    r.task_loss += task_losses[i] / static_cast<double>(n);
    r.attn_loss += attn_losses[i] / static_cast<double>(n);
    if (stats[i]) {
      r.in_mask += stats[i]->in_mask;
      r.phase_mass += stats[i]->phase_mass;
      ++r.supervised;
    }
  }
  if (r.supervised) {
    r.in_mask /= static_cast<double>(r.supervised);
    r.phase_mass /= static_cast<double>(r.supervised);
  }
  if (config.task == Task::ef) {
    std::vector<double> pred, labels;
    for (std::size_t i = 0; i < n; ++i) {
      pred.push_back(r.predictions[i][0]);
      labels.push_back(samples[i].ef_label.value());
    }
    r.mae = mean_absolute_error(pred, labels);
    r.r2 = r_squared(pred, labels);
    r.baseline_mae = constant_baseline_mae(labels);
  } else {
    std::vector<std::size_t> labels;
    for (const auto& s : samples) labels.push_back(s.as_class.value());
    const auto pred = r.predicted_classes();
    r.severity = severity_accuracy(pred, labels);
    r.detection = detection_accuracy(pred, labels);
  }
  return r;
}

nlohmann::json TrainResult::report(const RunConfig& config) const {
  nlohmann::json j;
  j["config"] = config.to_json();
  j["steps_run"] = steps_run;
  j["best_step"] = best_step;
  j["stopped_early"] = stopped_early;
  j["history"] = {{"train_loss", train_loss}, {"task_loss", task_loss}, {"attn_loss", attn_loss}};
  j["validation"] = validation;
  j["test"] = test.to_json();
  j["prototypes"] = prototypes;
  return j;
}

TrainResult train_model(const RunConfig& config, const Dataset& data, std::ostream* log) {
  config.validate();
  apply_threads(config);
  if (data.train.empty() || data.val.empty() || data.test.empty())
    throw ConfigError("training needs non-empty train, val and test splits");

  TrainResult result;
  auto params = init_parameters<float>(config.model, derive_seed(config.seed, "init"));
  Adam<float> adam(config.optim);
  std::vector<std::vector<VideoTarget>> targets;
  for (const auto& s : data.train) targets.push_back(supervision_targets(s, config.model.patch_size));

  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "batches"));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  std::optional<EvalResult> best;
  std::size_t stale = 0;
  auto validate_at = [&](std::size_t step) {
    auto v = evaluate(config, params, data.val);
    nlohmann::json entry = v.to_json();
    entry["step"] = step;
    result.validation.push_back(entry);
    if (log) {
      *log << "step " << step << " val " << (config.task == Task::ef ? "mae " : "accuracy ") << headline(v);
      if (!result.train_loss.empty()) *log << " train_loss " << result.train_loss.back();
      *log << '\n';
    }
    if (improved(config.task, v, best ? &*best : nullptr)) {
      best = std::move(v);
      result.best = params;
      result.best_step = step;
      stale = 0;
    } else {
      ++stale;
    }
  };

  validate_at(0);
  const std::size_t batch_size = std::min(config.train.batch_size, data.train.size());
  for (std::size_t step = 0; step < config.train.steps; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < batch_size) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }

    std::vector<GradientMap<float>> grads(batch.size());
    std::vector<double> losses(batch.size()), task_losses(batch.size()), attn_losses(batch.size());
    try {
      parallel_for(batch.size(), [&](std::size_t j) {
        const auto& sample = data.train[batch[j]];
        Binding<float> binding(params);
        ForwardPass<float> pass(config.model, binding,
                                {true, derive_seed(config.seed, "dropout", step * batch_size + j)});
        const auto out = pass.run(sample, config.task);
        const auto task = task_loss(out, sample);
        const auto attn = total_attention_loss(out, targets[batch[j]], config.attn);
        const auto loss = overall_loss(task, attn.total);
        loss.backward();
        grads[j] = binding.gradients();
        losses[j] = loss.item();
        task_losses[j] = task.item();
        attn_losses[j] = attn.total.item();
      });
    } catch (const NumericError& e) {
      throw NumericError("training step " + std::to_string(step + 1) + ": " + e.what());
    }

    GradientMap<float> total;
    for (const auto& g : grads) accumulate(total, g);
    const float inv = 1.0f / static_cast<float>(batch.size());
    for (auto& [_, g] : total)
      for (auto& v : g) v *= inv;
    double mean_loss = 0.0, mean_task = 0.0, mean_attn = 0.0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      mean_loss += losses[j];
      mean_task += task_losses[j];
      mean_attn += attn_losses[j];
    }
    const double denom = static_cast<double>(batch.size());
    if (!std::isfinite(mean_loss)) throw NumericError("non-finite loss at step " + std::to_string(step + 1));
    try {
      adam.step(params, total);
    } catch (const NumericError& e) {
      throw NumericError("training step " + std::to_string(step + 1) + ": " + e.what());
    }
    result.train_loss.push_back(mean_loss / denom);
    result.task_loss.push_back(mean_task / denom);
    result.attn_loss.push_back(mean_attn / denom);
    result.steps_run = step + 1;

    if ((step + 1) % config.train.eval_every == 0 || step + 1 == config.train.steps) {
      validate_at(step + 1);
      if (config.train.patience > 0 && stale >= config.train.patience) {
        result.stopped_early = step + 1 < config.train.steps;
        break;
      }
    }
  }

  result.test = evaluate(config, result.best, data.test);
  if (config.train.prototypes) result.prototypes = fit_prototypes(config, result.best, data);
  return result;
}

nlohmann::json fit_prototypes(const RunConfig& config, ParameterStore<float>& params, const Dataset& data) {
  ParameterStore<float> backbone = params;
  backbone.erase_prefix("proto.");
  const auto backbone_test = evaluate(config, backbone, data.test);

  nlohmann::json out;
  for (ProtoLevel level : {ProtoLevel::spatial, ProtoLevel::temporal}) {
    auto fit = fit_prototype_branch(config.model, backbone, config.task, data.train, level, config.proto,
                                    derive_seed(config.seed, "proto"));
    const auto labels = proto_labels(data.test, config.task, fit.edges);
    std::vector<std::size_t> proto_pred(data.test.size()), head_pred;
    parallel_for(data.test.size(), [&](std::size_t i) {
      const auto c = extract_candidates(config.model, backbone, data.test[i], config.task, level, config.proto,
                                        labels[i]);
      proto_pred[i] = argmax(proto_probabilities(fit.bank, c));
    });
    if (config.task == Task::as) {
      head_pred = backbone_test.predicted_classes();
    } else {
      for (const auto& p : backbone_test.predictions) head_pred.push_back(quartile_class(p[0], fit.edges));
    }
    for (const auto& [path, p] : fit.bank.params) params.set(path, p.shape, p.values);
    out[std::string(proto_level_name(level))] = {
        {"prototypes", fit.bank.count()},
        {"train_accuracy", fit.report.train_accuracy},
        {"test_accuracy", severity_accuracy(proto_pred, labels)},
        {"backbone_test_accuracy", severity_accuracy(head_pred, labels)},
        {"first_loss", fit.report.losses.empty() ? 0.0 : fit.report.losses.front()},
        {"last_loss", fit.report.losses.empty() ? 0.0 : fit.report.losses.back()},
        {"projection", fit.bank.projection_json()},
    };
    if (config.task == Task::ef) out["ef_class_edges"] = fit.edges;
  }
  if (backbone.checksum() != [&] {
        auto check = params;
        check.erase_prefix("proto.");
        return check.checksum();
      }())
    throw ContractViolation("backbone parameters changed while fitting prototypes");
  return out;
}

std::filesystem::path prototype_table_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".prototypes.json");
  return p;
}

nlohmann::json cmd_train(const RunConfig& config, std::ostream* log) {
  config.validate();
  const auto data = make_splits(config.synth());
  const auto result = train_model(config, data, log);
  save_checkpoint(config.checkpoint_path(), result.best);
  auto report = result.report(config);
  report["checkpoint"] = config.checkpoint_path().string();
  write_json(config.out / "train_report.json", report);
  if (!result.prototypes.is_null()) write_json(prototype_table_path(config.checkpoint_path()), result.prototypes);
  return report;
}

ParameterStore<float> load_model(const RunConfig& config, const std::filesystem::path& path) {
  auto params = load_checkpoint(path);
  GemTransModel<float> model(config.model, params);
  return params;
}

nlohmann::json cmd_eval(const RunConfig& config, Split split) {
  config.validate();
  const auto params = load_model(config, config.checkpoint_path());
  const auto samples = make_split(config.synth(), split);
  const auto result = evaluate(config, params, samples);
  nlohmann::json report = result.to_json(true);
  report["split"] = split_name(split);
  report["checkpoint"] = config.checkpoint_path().string();
  write_json(config.out / "eval_report.json", report);
  return report;
}

VideoSample resolve_sample(const RunConfig& config, const std::string& id) {
  const auto first = id.find('-'), last = id.rfind('-');
  if (first == std::string::npos || first == last) throw ConfigError("malformed sample id '" + id + "'");
  const auto task = id.substr(0, first), split = id.substr(first + 1, last - first - 1), digits = id.substr(last + 1);
  if (task != task_name(config.task)) throw ConfigError("sample '" + id + "' does not belong to task " + task);
  std::optional<Split> which;
  for (Split s : {Split::train, Split::val, Split::test})
    if (split == split_name(s)) which = s;
  if (!which || digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError("malformed sample id '" + id + "'");
  const std::size_t index = std::stoul(digits);
  if (index >= config.data.count(*which))
    throw ConfigError("sample '" + id + "' is outside the configured split size");
  return generate(config.synth(), *which, index);
}

nlohmann::json cmd_explain(const RunConfig& config, const std::vector<std::string>& sample_ids) {
  config.validate();
  const auto params = load_model(config, config.checkpoint_path());
  std::vector<std::string> ids = sample_ids;
  if (ids.empty())
    for (std::size_t i = 0; i < std::min<std::size_t>(4, config.data.test); ++i)
      ids.push_back(sample_id(config.task, Split::test, i));

  nlohmann::json table;
  if (std::ifstream in(prototype_table_path(config.checkpoint_path())); in) table = nlohmann::json::parse(in);
  std::vector<PrototypeBank> banks;
  for (ProtoLevel level : {ProtoLevel::spatial, ProtoLevel::temporal})
    if (params.contains("proto." + std::string(proto_level_name(level)) + ".prototypes"))
      banks.push_back(bank_from_store(params, level));

  const std::size_t grid_cols = config.model.width / config.model.patch_size;
  nlohmann::json summary{{"files", nlohmann::json::array()}};
  double in_mask_total = 0.0;
  std::size_t supervised = 0;
  for (const auto& id : ids) {
    const auto sample = resolve_sample(config, id);
    Binding<float> frozen(params, false);
    ForwardPass<float> pass(config.model, frozen);
    const auto out = pass.run(sample, config.task);
    const auto record = out.record();

    nlohmann::json doc{{"sample_id", id}, {"task", task_name(config.task)}};
    doc["prediction"] = std::vector<float>(out.prediction.data().begin(), out.prediction.data().end());
    if (sample.ef_label) doc["ef_label"] = *sample.ef_label;
    if (sample.as_class) doc["as_class"] = *sample.as_class;
    std::string text = id + "\n";
    char buf[32];
    for (std::size_t f = 0; f < record.spatial.size(); ++f) {
      const auto& v = record.spatial[f];
      doc["spatial"].push_back({{"k", f / record.frames}, {"t", f % record.frames}, {"values", v}});
      text += "spatial k=" + std::to_string(f / record.frames) + " t=" + std::to_string(f % record.frames) + "\n";
      for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%6.3f", v[i]);
        text += buf;
        text += (i + 1) % grid_cols == 0 ? "\n" : " ";
      }
    }
    for (std::size_t k = 0; k < record.videos; ++k) {
      doc["temporal"].push_back({{"k", k}, {"values", record.temporal[k]}});
      text += "temporal k=" + std::to_string(k) + "\n";
      for (double v : record.temporal[k]) {
        std::snprintf(buf, sizeof buf, "%6.3f ", v);
        text += buf;
      }
      text += "\n";
    }
    doc["video"] = record.video;
    const auto targets = supervision_targets(sample, config.model.patch_size);
    if (!targets.empty()) {
      const auto stats = attention_stats(record, targets, config.attn.mode);
      doc["in_mask_fraction"] = stats.in_mask;
      doc["ed_es_mass"] = stats.phase_mass;
      in_mask_total += stats.in_mask;
      ++supervised;
    }
    for (const auto& bank : banks) {
      const auto c = extract_candidates(config.model, params, sample, config.task, bank.level, config.proto, 0);
      const auto sims = proto_similarities(bank, c);
      std::vector<std::size_t> order(sims.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
      const std::string name(proto_level_name(bank.level));
      doc["prototypes"][name] = nlohmann::json::array();
      for (std::size_t i = 0; i < std::min<std::size_t>(3, order.size()); ++i) {
        nlohmann::json e{{"prototype", order[i]}, {"class", order[i] / bank.per_class}, {"similarity", sims[order[i]]}};
        const auto key = std::to_string(order[i]);
        if (table.contains(name) && table[name]["projection"].contains(key))
          e["projection"] = table[name]["projection"][key];
        doc["prototypes"][name].push_back(std::move(e));
      }
    }
    const auto json_path = config.out / "explain" / (id + ".json");
    write_json(json_path, doc);
    const auto txt_path = config.out / "explain_txt" / (id + ".txt");
    std::filesystem::create_directories(txt_path.parent_path());
    std::ofstream(txt_path, std::ios::trunc) << text;
    summary["files"].push_back(json_path.string());
  }
  summary["samples"] = ids.size();
  if (supervised) summary["mean_in_mask_fraction"] = in_mask_total / static_cast<double>(supervised);
  write_json(config.out / "explain_report.json", summary);
  return summary;
}

nlohmann::json cmd_ablate(const RunConfig& config, std::ostream* log) {
  config.validate();
  if (config.task != Task::ef) throw ConfigError("ablate runs on the ef task");
  const auto data = make_splits(config.synth());
  struct Row {
    const char* name;
    double lambda_spatial, lambda_temporal;
  };
  const Row rows[] = {{"full", config.attn.lambda_spatial, config.attn.lambda_temporal},
                      {"no-spatial", 0.0, config.attn.lambda_temporal},
                      {"no-temporal", config.attn.lambda_spatial, 0.0}};
  nlohmann::json report{{"seed", config.seed}, {"rows", nlohmann::json::array()}};
  for (const auto& row : rows) {
    auto c = config;
    c.attn.lambda_spatial = row.lambda_spatial;
    c.attn.lambda_temporal = row.lambda_temporal;
    c.train.prototypes = false;
    if (log) *log << "ablate: " << row.name << '\n';
    const auto cpu_start = std::clock();
    const auto wall_start = std::chrono::steady_clock::now();
    const auto result = train_model(c, data, log);
    const double cpu = static_cast<double>(std::clock() - cpu_start) / CLOCKS_PER_SEC;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    const auto val = evaluate(c, result.best, data.val);
    report["rows"].push_back({{"name", row.name},
                              {"seed", c.seed},
                              {"lambda_spatial", row.lambda_spatial},
                              {"lambda_temporal", row.lambda_temporal},
                              {"best_step", result.best_step},
                              {"cpu_seconds", cpu},
                              {"wall_seconds", wall},
                              {"val", val.to_json()},
                              {"test", result.test.to_json()}});
  }
  write_json(config.out / "ablation_report.json", report);
  return report;
}

std::vector<GradcheckRun> run_gradcheck(const GradCheckOptions& options) {
  std::vector<GradcheckRun> runs;
  for (Task task : {Task::ef, Task::as}) {
    const auto config = gradcheck_config(task);
    const auto samples = make_split(config.synth(), Split::train);
    std::vector<std::vector<VideoTarget>> targets;
    for (const auto& s : samples) targets.push_back(supervision_targets(s, config.model.patch_size));
    auto params = init_parameters<double>(config.model, config.seed, 0.02);
    const LossFunction loss = [&](Binding<double>& binding) {
      ForwardPass<double> pass(config.model, binding);
      Tensor<double> total;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto out = pass.run(samples[i], task);
        const auto l = overall_loss(task_loss(out, samples[i]), total_attention_loss(out, targets[i], config.attn).total);
        total = i == 0 ? l : add(total, l);
      }
      return scale(total, 1.0 / static_cast<double>(samples.size()));
    };
    runs.push_back({task, grad_check(loss, params, options)});
  }
  return runs;
}

nlohmann::json gradcheck_json(const std::vector<GradcheckRun>& runs, const GradCheckOptions& options) {
  nlohmann::json j{{"step", options.step}, {"tolerance", options.tolerance}, {"denominator_floor", options.denominator_floor}};
  bool passed = true;
  for (const auto& run : runs) {
    nlohmann::json params = nlohmann::json::object();
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& p : run.report.parameters) {
      params[p.path] = {{"count", p.count}, {"max_rel_error", p.max_rel_error}, {"max_abs_error", p.max_abs_error}};
      const auto group = p.path.substr(0, p.path.find('.'));
      groups[group] = std::max(groups.value(group, 0.0), p.max_rel_error);
    }
    j[std::string(task_name(run.task))] = {{"passed", run.report.passed},
                                           {"max_rel_error", run.report.max_rel_error},
                                           {"worst_path", run.report.worst_path},
                                           {"evaluations", run.report.evaluations},
                                           {"groups", groups},
                                           {"parameters", params}};
    passed = passed && run.report.passed;
  }
  j["passed"] = passed;
  return j;
}

}  // namespace gemtrans

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemtrans/adam.hpp"
#include "gemtrans/attn_supervision.hpp"
#include "gemtrans/model.hpp"
#include "gemtrans/prototype.hpp"
#include "gemtrans/synth.hpp"

namespace gemtrans {

struct TrainOptions {
  std::size_t batch_size = 16;
  std::size_t steps = 2000;
  std::size_t eval_every = 100;
  std::size_t patience = 10;  // evaluations without improvement
  std::size_t threads = 0;    // 0: OpenMP default
  bool prototypes = true;     // fit both prototype banks after training
};

/// Everything a run depends on. Built from flat "key = value" text.
struct RunConfig {
  Task task = Task::ef;
  std::uint64_t seed = 0;
  EncoderConfig model;
  SynthConfig data;
  AttnLossWeights attn;
  AdamOptions optim{.lr = 1e-4, .clip_norm = 1.0};
  TrainOptions train;
  ProtoConfig proto;
  std::filesystem::path out = "out";
  std::filesystem::path checkpoint;  // empty: <out>/model.gemt

  // Data config with the run's task and seed.
  SynthConfig synth() const {
    auto d = data;
    d.task = task;
    d.seed = seed;
    return d;
  }
  std::filesystem::path checkpoint_path() const { return checkpoint.empty() ? out / "model.gemt" : checkpoint; }

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
};

// Lines are "key = value"; blank lines and lines starting with '#' are
// skipped. Unknown or repeated keys are errors. `overrides` ("key=value") are
// applied after the text and may replace its keys. data.videos defaults to 1
// for ef and 2 for as; the model's K, T, H, W always follow the data section.
RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::filesystem::path& path);
// Applies one key as if it appeared in the file.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
// Makes model dimensions, data seed and task consistent, then validates.
void finalize(RunConfig& config, std::optional<std::size_t> explicit_videos = std::nullopt);

// The tiny double-precision setup used by gradient checking.
RunConfig gradcheck_config(Task task);

}  // namespace gemtrans

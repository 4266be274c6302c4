#include "gemtrans/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gemtrans/error.hpp"

namespace gemtrans {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename U>
U parse_unsigned(const std::string& key, const std::string& value) {
  U out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size() || value.empty()) throw ConfigError(key + ": expected a number, got '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename Field>
Setter set_size(Field field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_unsigned<std::size_t>(k, v); };
}

template <typename Field>
Setter set_double(Field field) {
  return [field](RunConfig& c, const std::string& k, const std::string& v) { field(c) = parse_double(k, v); };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    t["task"] = [](RunConfig& c, const std::string&, const std::string& v) { c.task = parse_task(v); };
    t["seed"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.seed = parse_unsigned<std::uint64_t>(k, v);
    };
    t["out"] = [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; };
    t["checkpoint"] = [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; };

    t["model.patch_size"] = set_size([](RunConfig& c) -> auto& { return c.model.patch_size; });
    t["model.embed_dim"] = set_size([](RunConfig& c) -> auto& { return c.model.embed_dim; });
    t["model.layers"] = set_size([](RunConfig& c) -> auto& { return c.model.layers; });
    t["model.heads"] = set_size([](RunConfig& c) -> auto& { return c.model.heads; });
    t["model.mlp_hidden"] = set_size([](RunConfig& c) -> auto& { return c.model.mlp_hidden; });
    t["model.dropout"] = set_double([](RunConfig& c) -> auto& { return c.model.dropout; });
    t["model.layernorm_eps"] = set_double([](RunConfig& c) -> auto& { return c.model.layernorm_eps; });
    t["model.spatial_slots"] = set_size([](RunConfig& c) -> auto& { return c.model.spatial_slots; });
    t["model.temporal_slots"] = set_size([](RunConfig& c) -> auto& { return c.model.temporal_slots; });
    t["model.video_slots"] = set_size([](RunConfig& c) -> auto& { return c.model.video_slots; });

    t["data.videos"] = set_size([](RunConfig& c) -> auto& { return c.data.videos; });
    t["data.frames"] = set_size([](RunConfig& c) -> auto& { return c.data.frames; });
    t["data.height"] = set_size([](RunConfig& c) -> auto& { return c.data.height; });
    t["data.width"] = set_size([](RunConfig& c) -> auto& { return c.data.width; });
    t["data.noise"] = set_double([](RunConfig& c) -> auto& { return c.data.noise; });
    t["data.train"] = set_size([](RunConfig& c) -> auto& { return c.data.train; });
    t["data.val"] = set_size([](RunConfig& c) -> auto& { return c.data.val; });
    t["data.test"] = set_size([](RunConfig& c) -> auto& { return c.data.test; });

    t["attn.lambda_spatial"] = set_double([](RunConfig& c) -> auto& { return c.attn.lambda_spatial; });
    t["attn.lambda_temporal"] = set_double([](RunConfig& c) -> auto& { return c.attn.lambda_temporal; });
    t["attn.temporal_mode"] = [](RunConfig& c, const std::string&, const std::string& v) {
      c.attn.mode = parse_temporal_mode(v);
    };

    t["optim.lr"] = set_double([](RunConfig& c) -> auto& { return c.optim.lr; });
    t["optim.beta1"] = set_double([](RunConfig& c) -> auto& { return c.optim.beta1; });
    t["optim.beta2"] = set_double([](RunConfig& c) -> auto& { return c.optim.beta2; });
    t["optim.eps"] = set_double([](RunConfig& c) -> auto& { return c.optim.eps; });
    t["optim.weight_decay"] = set_double([](RunConfig& c) -> auto& { return c.optim.weight_decay; });
    t["optim.clip_norm"] = set_double([](RunConfig& c) -> auto& { return c.optim.clip_norm; });

    t["train.batch_size"] = set_size([](RunConfig& c) -> auto& { return c.train.batch_size; });
    t["train.steps"] = set_size([](RunConfig& c) -> auto& { return c.train.steps; });
    t["train.eval_every"] = set_size([](RunConfig& c) -> auto& { return c.train.eval_every; });
    t["train.patience"] = set_size([](RunConfig& c) -> auto& { return c.train.patience; });
    t["train.threads"] = set_size([](RunConfig& c) -> auto& { return c.train.threads; });
    t["train.prototypes"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.train.prototypes = parse_bool(k, v);
    };

    t["proto.spatial_per_class"] = set_size([](RunConfig& c) -> auto& { return c.proto.spatial_per_class; });
    t["proto.temporal_per_class"] = set_size([](RunConfig& c) -> auto& { return c.proto.temporal_per_class; });
    t["proto.spatial_keep"] = set_double([](RunConfig& c) -> auto& { return c.proto.spatial_keep; });
    t["proto.temporal_keep"] = set_double([](RunConfig& c) -> auto& { return c.proto.temporal_keep; });
    t["proto.steps"] = set_size([](RunConfig& c) -> auto& { return c.proto.steps; });
    t["proto.batch_size"] = set_size([](RunConfig& c) -> auto& { return c.proto.batch_size; });
    t["proto.lr"] = set_double([](RunConfig& c) -> auto& { return c.proto.lr; });
    return t;
  }();
  return table;
}

}  // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(config, key, value);
}

void finalize(RunConfig& config, std::optional<std::size_t> explicit_videos) {
  config.data.task = config.task;
  config.data.seed = config.seed;
  config.data.videos = explicit_videos.value_or(config.task == Task::ef ? 1 : 2);
  config.model.videos = config.data.videos;
  config.model.frames = config.data.frames;
  config.model.height = config.data.height;
  config.model.width = config.data.width;
  config.validate();
}

RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  RunConfig config;
  std::set<std::string> seen;
  std::optional<std::size_t> videos;
  auto apply = [&](std::string_view body, const std::string& where, bool is_override) {
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const auto key = trim(body.substr(0, eq));
    const auto value = trim(body.substr(eq + 1));
    if (!seen.insert(key).second && !is_override) throw ConfigError(where + ": repeated key '" + key + "'");
    try {
      apply_setting(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    if (key == "data.videos") videos = config.data.videos;
  };
  std::istringstream in(text);
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    apply(body, "line " + std::to_string(number), false);
  }
  for (const auto& kv : overrides) apply(trim(kv), "override '" + kv + "'", true);
  finalize(config, videos);
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void RunConfig::validate() const {
  model.validate();
  data.validate();
  attn.validate();
  optim.validate();
  proto.validate();
  if (model.videos != data.videos || model.frames != data.frames || model.height != data.height ||
      model.width != data.width)
    throw ConfigError("model and data dimensions disagree");
  if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (train.eval_every == 0) throw ConfigError("train.eval_every must be positive");
  if (data.train == 0 || data.val == 0 || data.test == 0) throw ConfigError("every split needs at least one sample");
  if (out.empty()) throw ConfigError("out must not be empty");
}

nlohmann::json RunConfig::to_json() const {
  return {
      {"task", task_name(task)},
      {"seed", seed},
      {"model",
       {{"patch_size", model.patch_size},
        {"embed_dim", model.embed_dim},
        {"layers", model.layers},
        {"heads", model.heads},
        {"mlp_hidden", model.mlp_hidden},
        {"dropout", model.dropout},
        {"layernorm_eps", model.layernorm_eps},
        {"slots", {model.slots(Level::spatial), model.slots(Level::temporal), model.slots(Level::video)}}}},
      {"data",
       {{"videos", data.videos},
        {"frames", data.frames},
        {"height", data.height},
        {"width", data.width},
        {"noise", data.noise},
        {"train", data.train},
        {"val", data.val},
        {"test", data.test}}},
      {"attn",
       {{"lambda_spatial", attn.lambda_spatial},
        {"lambda_temporal", attn.lambda_temporal},
        {"temporal_mode", temporal_mode_name(attn.mode)}}},
      {"optim",
       {{"lr", optim.lr},
        {"beta1", optim.beta1},
        {"beta2", optim.beta2},
        {"eps", optim.eps},
        {"weight_decay", optim.weight_decay},
        {"clip_norm", optim.clip_norm}}},
      {"train",
       {{"batch_size", train.batch_size},
        {"steps", train.steps},
        {"eval_every", train.eval_every},
        {"patience", train.patience},
        {"prototypes", train.prototypes}}},
      {"proto",
       {{"spatial_per_class", proto.spatial_per_class},
        {"temporal_per_class", proto.temporal_per_class},
        {"spatial_keep", proto.spatial_keep},
        {"temporal_keep", proto.temporal_keep},
        {"steps", proto.steps},
        {"batch_size", proto.batch_size},
        {"lr", proto.lr}}},
  };
}

RunConfig gradcheck_config(Task task) {
  RunConfig c;
  c.task = task;
  c.seed = 7;
  c.model.embed_dim = 8;
  c.model.layers = 1;
  c.model.heads = 2;
  c.model.mlp_hidden = 16;
  c.model.dropout = 0.0;
  c.data.frames = 4;
  c.data.height = 16;
  c.data.width = 16;
  c.data.train = 2;
  c.data.val = 1;
  c.data.test = 1;
  finalize(c, 2);
  return c;
}

}  // namespace gemtrans

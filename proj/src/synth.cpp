#include "gemtrans/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "gemtrans/checkpoint.hpp"
#include "gemtrans/error.hpp"
#include "gemtrans/random.hpp"

namespace gemtrans {

namespace {

constexpr double kBackground = 0.1;
constexpr double kAsBackground = 0.3;  // mid grey, so ring brightness shows up as contrast
constexpr double kVentricle = 0.75;

double clip01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Half-widths of the axis-aligned bounding box.
std::pair<double, double> extent(const Ellipse& e) {
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  return {std::sqrt(e.a * e.a * c * c + e.b * e.b * s * s), std::sqrt(e.a * e.a * s * s + e.b * e.b * c * c)};
}

void check_fits(const Ellipse& e, std::size_t height, std::size_t width) {
  const auto [ex, ey] = extent(e);
  if (e.cx - ex < 0.0 || e.cx + ex > static_cast<double>(width) || e.cy - ey < 0.0 ||
      e.cy + ey > static_cast<double>(height)) {
    throw ConfigError("degenerate geometry: ellipse does not fit in a " + std::to_string(height) + "x" +
                      std::to_string(width) + " frame");
  }
}

// Uniform centre coordinate that keeps a half-extent `half` plus one pixel of margin.
double draw_centre(std::mt19937_64& rng, double half, std::size_t size) {
  const double lo = half + 1.0, hi = static_cast<double>(size) - half - 1.0;
  if (lo > hi) throw ConfigError("degenerate geometry: shape larger than a " + std::to_string(size) + " px frame");
  return uniform(rng, lo, hi);
}

std::vector<float> ring_coverage(double cx, double cy, double outer, double inner, std::size_t height,
                                 std::size_t width) {
  auto out = coverage({cx, cy, outer, outer, 0.0}, height, width);
  const auto hole = coverage({cx, cy, inner, inner, 0.0}, height, width);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= hole[i];
  return out;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "";
}

std::size_t SynthConfig::count(Split split) const {
  return split == Split::train ? train : split == Split::val ? val : test;
}

void SynthConfig::validate() const {
  if (videos == 0 || frames == 0 || height == 0 || width == 0) throw ConfigError("data dimensions must be positive");
  if (task == Task::ef && frames < 2) throw ConfigError("EF data needs at least 2 frames for distinct ED/ES");
  if (!(noise >= 0.0 && noise <= 0.2)) throw ConfigError("data.noise must be in [0, 0.2]");
}

bool Ellipse::contains(double x, double y) const {
  const double c = std::cos(theta), s = std::sin(theta);
  const double dx = x - cx, dy = y - cy;
  const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
  return u * u + v * v <= 1.0;
}

double Ellipse::area() const { return std::numbers::pi * a * b; }

std::vector<std::uint8_t> rasterize(const Ellipse& e, std::size_t height, std::size_t width) {
  std::vector<std::uint8_t> mask(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      mask[y * width + x] = e.contains(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5) ? 1 : 0;
  return mask;
}

std::vector<float> coverage(const Ellipse& e, std::size_t height, std::size_t width, std::size_t n) {
  std::vector<float> out(height * width);
  const double step = 1.0 / static_cast<double>(n);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          hits += e.contains(static_cast<double>(x) + (j + 0.5) * step, static_cast<double>(y) + (i + 0.5) * step);
      out[y * width + x] = static_cast<float>(static_cast<double>(hits) / static_cast<double>(n * n));
    }
  }
  return out;
}

double EfGeometry::scale(std::size_t t) const {
  const double phase = 2.0 * std::numbers::pi * (static_cast<double>(t) - static_cast<double>(ed_frame)) /
                       static_cast<double>(frames);
  return s_min + (1.0 - s_min) * (1.0 + std::cos(phase)) / 2.0;
}

std::size_t EfGeometry::es_frame() const {
  if (frames % 2 == 0) return (ed_frame + frames / 2) % frames;
  std::size_t best = 0;
  for (std::size_t t = 1; t < frames; ++t)
    if (scale(t) < scale(best)) best = t;
  return best;
}

EfGeometry draw_ef_geometry(const SynthConfig& config, std::mt19937_64& rng) {
  EfGeometry g;
  g.frames = config.frames;
  g.s_min = std::sqrt(1.0 - uniform(rng, 0.05, 0.95));
  g.ed_frame = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(config.frames)) % config.frames;
  const double w = static_cast<double>(config.width), h = static_cast<double>(config.height);
  const double a = uniform(rng, 0.19, 0.28) * w;
  const double b = uniform(rng, 0.16, 0.22) * h;
  const double theta = uniform(rng, -0.3, 0.3);
  for (std::size_t k = 0; k < config.videos; ++k) {
    Ellipse e;
    if (k % 2 == 0) {
      e = {0.0, 0.0, a, b, theta};
    } else {
      e = {0.0, 0.0, a * 1.25, b * 0.75, theta + uniform(rng, 0.6, 1.2)};
    }
    const auto [ex, ey] = extent(e);
    e.cx = draw_centre(rng, ex, config.width);
    e.cy = draw_centre(rng, ey, config.height);
    g.views.push_back(e);
  }
  return g;
}

VideoSample render_ef_sample(const SynthConfig& config, const EfGeometry& geometry, std::string id,
                             std::mt19937_64& rng) {
  if (geometry.views.size() != config.videos || geometry.frames != config.frames)
    throw ConfigError("EF geometry does not match the data config");
  if (!(geometry.s_min > 0.0 && geometry.s_min <= 1.0)) throw ConfigError("s_min must be in (0, 1]");
  const std::size_t H = config.height, W = config.width, T = config.frames;
  for (const auto& e : geometry.views) check_fits(e, H, W);

  VideoSample s;
  s.id = std::move(id);
  s.videos = config.videos;
  s.frames = T;
  s.height = H;
  s.width = W;
  s.pixels.resize(s.videos * T * H * W);
  s.ef_label = geometry.label();

  const bool pulsates = geometry.s_min < 1.0;
  const std::size_t ed = pulsates ? geometry.ed_frame : 0;
  const std::size_t es = pulsates ? geometry.es_frame() : T / 2;
  for (std::size_t k = 0; k < s.videos; ++k) {
    const auto& view = geometry.views[k];
    for (std::size_t t = 0; t < T; ++t) {
      const auto cov = coverage(view.scaled(geometry.scale(t)), H, W);
      float* out = s.pixels.data() + (k * T + t) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        const double v = kBackground + (kVentricle - kBackground) * cov[i] + config.noise * standard_normal(rng);
        out[i] = static_cast<float>(clip01(v));
      }
    }
    VideoAnnotation a;
    a.ed_index = ed;
    a.es_index = es;
    a.ed_mask = rasterize(view.scaled(geometry.scale(ed)), H, W);
    a.es_mask = rasterize(view.scaled(geometry.scale(es)), H, W);
    s.annotations.push_back(std::move(a));
  }
  return s;
}

AsGeometry draw_as_geometry(const SynthConfig& config, std::size_t severity, std::mt19937_64& rng) {
  if (severity >= kSeverityClasses) throw ConfigError("AS severity out of range");
  const double c = static_cast<double>(severity);
  AsGeometry g;
  g.severity = severity;
  g.brightness = 0.35 + 0.17 * c + uniform(rng, -0.03, 0.03);
  g.speckle = 0.05 + 0.1 * c;
  const double size = static_cast<double>(std::min(config.height, config.width));
  g.outer = uniform(rng, 0.22, 0.28) * size;
  g.inner = g.outer * (0.7 - 0.12 * c + uniform(rng, -0.03, 0.03));
  for (std::size_t k = 0; k < config.videos; ++k)
    g.centres.emplace_back(draw_centre(rng, g.outer, config.width), draw_centre(rng, g.outer, config.height));
  return g;
}

VideoSample render_as_sample(const SynthConfig& config, const AsGeometry& geometry, std::string id,
                             std::mt19937_64& rng) {
  if (geometry.centres.size() != config.videos) throw ConfigError("AS geometry does not match the data config");
  if (!(geometry.inner >= 0.0 && geometry.inner < geometry.outer)) throw ConfigError("AS ring radii are degenerate");
  const std::size_t H = config.height, W = config.width, T = config.frames;
  for (const auto& [cx, cy] : geometry.centres) check_fits({cx, cy, geometry.outer, geometry.outer, 0.0}, H, W);

  VideoSample s;
  s.id = std::move(id);
  s.videos = config.videos;
  s.frames = T;
  s.height = H;
  s.width = W;
  s.pixels.resize(s.videos * T * H * W);
  s.as_class = geometry.severity;
  for (std::size_t k = 0; k < s.videos; ++k) {
    const auto [cx, cy] = geometry.centres[k];
    const auto ring = ring_coverage(cx, cy, geometry.outer, geometry.inner, H, W);
    // Speckle is a fixed texture of the ring, additive noise changes per frame.
    std::vector<double> tissue(H * W);
    for (auto& v : tissue) v = geometry.brightness * (1.0 + geometry.speckle * standard_normal(rng));
    for (std::size_t t = 0; t < T; ++t) {
      float* out = s.pixels.data() + (k * T + t) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        const double v = kAsBackground + (tissue[i] - kAsBackground) * ring[i] + config.noise * standard_normal(rng);
        out[i] = static_cast<float>(clip01(v));
      }
    }
  }
  return s;
}

std::string sample_id(Task task, Split split, std::size_t index) {
  char digits[16];
  std::snprintf(digits, sizeof digits, "%06zu", index);
  return std::string(task_name(task)) + "-" + std::string(split_name(split)) + "-" + digits;
}

std::uint64_t sample_seed(const SynthConfig& config, Split split, std::size_t index) {
  const std::string tag = std::string(task_name(config.task)) + "/" + std::string(split_name(split));
  return derive_seed(config.seed, tag, index);
}

VideoSample gen_ef_sample(const SynthConfig& config, Split split, std::size_t index) {
  config.validate();
  std::mt19937_64 rng(sample_seed(config, split, index));
  const auto geometry = draw_ef_geometry(config, rng);
  return render_ef_sample(config, geometry, sample_id(Task::ef, split, index), rng);
}

VideoSample gen_as_sample(const SynthConfig& config, Split split, std::size_t index) {
  config.validate();
  std::mt19937_64 rng(sample_seed(config, split, index));
  const auto geometry = draw_as_geometry(config, index % kSeverityClasses, rng);
  return render_as_sample(config, geometry, sample_id(Task::as, split, index), rng);
}

VideoSample generate(const SynthConfig& config, Split split, std::size_t index) {
  return config.task == Task::ef ? gen_ef_sample(config, split, index) : gen_as_sample(config, split, index);
}

const std::vector<VideoSample>& Dataset::split(Split s) const {
  return s == Split::train ? train : s == Split::val ? val : test;
}

std::vector<VideoSample> make_split(const SynthConfig& config, Split split) {
  config.validate();
  std::vector<VideoSample> out(config.count(split));
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = generate(config, split, i);
  return out;
}

Dataset make_splits(const SynthConfig& config) {
  return {make_split(config, Split::train), make_split(config, Split::val), make_split(config, Split::test)};
}

namespace {

ParameterStore<float> sample_entries(const VideoSample& s) {
  ParameterStore<float> c;
  c.add("pixels", {s.videos, s.frames, s.height, s.width}, s.pixels);
  if (s.supervised()) {
    std::vector<float> ed, es, idx;
    for (const auto& a : s.annotations) {
      ed.insert(ed.end(), a.ed_mask.begin(), a.ed_mask.end());
      es.insert(es.end(), a.es_mask.begin(), a.es_mask.end());
      idx.push_back(static_cast<float>(a.ed_index));
      idx.push_back(static_cast<float>(a.es_index));
    }
    c.add("masks.ed", {s.videos, s.height, s.width}, std::move(ed));
    c.add("masks.es", {s.videos, s.height, s.width}, std::move(es));
    c.add("phases", {s.videos, 2}, std::move(idx));
  }
  return c;
}

}  // namespace

void export_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir / "samples");
  nlohmann::json manifest;
  manifest["samples"] = nlohmann::json::array();
  for (Split split : {Split::train, Split::val, Split::test}) {
    for (const auto& s : data.split(split)) {
      const std::string file = "samples/" + s.id + ".gemt";
      std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
      if (!out) throw CheckpointError("cannot write '" + (dir / file).string() + "'");
      write_container(out, sample_entries(s));
      nlohmann::json entry{{"id", s.id}, {"split", split_name(split)}, {"file", file}};
      if (s.ef_label) entry["ef_label"] = *s.ef_label;
      if (s.as_class) entry["as_class"] = *s.as_class;
      manifest["samples"].push_back(std::move(entry));
    }
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

Dataset import_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("no manifest.json in '" + dir.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad manifest: ") + e.what());
  }
  Dataset data;
  for (const auto& entry : manifest.at("samples")) {
    std::ifstream file(dir / entry.at("file").get<std::string>(), std::ios::binary);
    if (!file) throw CheckpointError("missing sample file " + entry.at("file").get<std::string>());
    const auto c = read_container(file);
    const auto& px = c.at("pixels");
    if (px.shape.size() != 4) throw CheckpointError("pixels must be rank 4");
    VideoSample s;
    s.id = entry.at("id").get<std::string>();
    s.videos = px.shape[0];
    s.frames = px.shape[1];
    s.height = px.shape[2];
    s.width = px.shape[3];
    s.pixels = px.values;
    if (entry.contains("ef_label")) s.ef_label = entry["ef_label"].get<double>();
    if (entry.contains("as_class")) s.as_class = entry["as_class"].get<std::size_t>();
    if (c.contains("masks.ed")) {
      const auto& ed = c.at("masks.ed").values;
      const auto& es = c.at("masks.es").values;
      const auto& ph = c.at("phases").values;
      const std::size_t n = s.height * s.width;
      for (std::size_t k = 0; k < s.videos; ++k) {
        VideoAnnotation a;
        a.ed_mask.assign(ed.begin() + k * n, ed.begin() + (k + 1) * n);
        a.es_mask.assign(es.begin() + k * n, es.begin() + (k + 1) * n);
        a.ed_index = static_cast<std::size_t>(ph[2 * k]);
        a.es_index = static_cast<std::size_t>(ph[2 * k + 1]);
        s.annotations.push_back(std::move(a));
      }
    }
    s.validate();
    const auto split = entry.at("split").get<std::string>();
    if (split != "train" && split != "val" && split != "test") throw CheckpointError("unknown split '" + split + "'");
    auto& target = split == "train" ? data.train : split == "val" ? data.val : data.test;
    target.push_back(std::move(s));
  }
  return data;
}

}  // namespace gemtrans

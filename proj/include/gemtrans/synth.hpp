#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gemtrans/video.hpp"

namespace gemtrans {

enum class Split { train, val, test };

std::string_view split_name(Split split);

struct SynthConfig {
  Task task = Task::ef;
  std::uint64_t seed = 0;
  std::size_t train = 500;
  std::size_t val = 100;
  std::size_t test = 100;
  std::size_t videos = 1;  // K
  std::size_t frames = 8;  // T
  std::size_t height = 32;
  std::size_t width = 32;
  double noise = 0.05;  // sigma of additive Gaussian noise

  std::size_t count(Split split) const;
  // Throws ConfigError.
  void validate() const;
};

// An ellipse in pixel coordinates; the pixel (x, y) covers [x, x+1)×[y, y+1).
struct Ellipse {
  double cx = 0.0, cy = 0.0;
  double a = 1.0, b = 1.0;  // semi-axes before rotation
  double theta = 0.0;       // rotation of the a-axis, radians

  bool contains(double x, double y) const;
  double area() const;
  Ellipse scaled(double s) const { return {cx, cy, a * s, b * s, theta}; }
};

// 1 where the pixel centre lies inside the ellipse.
std::vector<std::uint8_t> rasterize(const Ellipse& e, std::size_t height, std::size_t width);
// Fraction of each pixel covered by the ellipse, from an n×n grid of samples.
std::vector<float> coverage(const Ellipse& e, std::size_t height, std::size_t width, std::size_t n = 4);

/// Generation parameters of one EF-analog sample. The ventricle of view k at
/// frame t is views[k].scaled(scale(t)).
struct EfGeometry {
  double s_min = 1.0;
  std::size_t frames = 8;
  std::size_t ed_frame = 0;  // phase of the largest extent
  std::vector<Ellipse> views;

  double scale(std::size_t t) const;
  double label() const { return 1.0 - s_min * s_min; }
  std::size_t es_frame() const;
};

EfGeometry draw_ef_geometry(const SynthConfig& config, std::mt19937_64& rng);
// Renders intensities, masks and ED/ES indices. Noise is drawn from `rng`.
VideoSample render_ef_sample(const SynthConfig& config, const EfGeometry& geometry, std::string id,
                             std::mt19937_64& rng);

/// Generation parameters of one AS-analog sample: an annulus per view.
struct AsGeometry {
  std::size_t severity = 0;
  double brightness = 0.35;
  double speckle = 0.05;
  double outer = 10.0;
  double inner = 6.0;
  std::vector<std::pair<double, double>> centres;  // one per view
};

AsGeometry draw_as_geometry(const SynthConfig& config, std::size_t severity, std::mt19937_64& rng);
VideoSample render_as_sample(const SynthConfig& config, const AsGeometry& geometry, std::string id,
                             std::mt19937_64& rng);

std::string sample_id(Task task, Split split, std::size_t index);
std::uint64_t sample_seed(const SynthConfig& config, Split split, std::size_t index);

VideoSample gen_ef_sample(const SynthConfig& config, Split split, std::size_t index);
// Class = index mod 4, so each split is balanced to within one sample.
VideoSample gen_as_sample(const SynthConfig& config, Split split, std::size_t index);
VideoSample generate(const SynthConfig& config, Split split, std::size_t index);

struct Dataset {
  std::vector<VideoSample> train, val, test;

  const std::vector<VideoSample>& split(Split s) const;
};

std::vector<VideoSample> make_split(const SynthConfig& config, Split split);
Dataset make_splits(const SynthConfig& config);

// One container file per sample plus manifest.json (ids, labels, split).
void export_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset import_dataset(const std::filesystem::path& dir);

}  // namespace gemtrans

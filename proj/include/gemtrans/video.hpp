#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gemtrans {

enum class Task { ef, as };

inline constexpr std::size_t kSeverityClasses = 4;

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

// Ground truth that drives attention supervision for one video.
struct VideoAnnotation {
  std::vector<std::uint8_t> ed_mask;  // H×W, 1 inside the ventricle
  std::vector<std::uint8_t> es_mask;
  std::size_t ed_index = 0;
  std::size_t es_index = 0;
};

/// K grayscale videos of T frames (H×W, intensities in [0, 1]) plus labels.
struct VideoSample {
  std::string id;
  std::size_t videos = 0;
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // K×T×H×W, row-major

  std::optional<double> ef_label;
  std::optional<std::size_t> as_class;
  // Empty, or one entry per video.
  std::vector<VideoAnnotation> annotations;

  std::span<const float> frame(std::size_t video, std::size_t t) const;
  std::array<double, kSeverityClasses> as_one_hot() const;
  bool supervised() const { return !annotations.empty(); }

  // Throws ConfigError describing the first violated invariant.
  void validate() const;
};

}  // namespace gemtrans

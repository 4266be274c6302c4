#include "gemtrans/video.hpp"

#include <cmath>

#include "gemtrans/error.hpp"

namespace gemtrans {

std::string_view task_name(Task task) {
  return task == Task::ef ? "ef" : "as";
}

Task parse_task(std::string_view name) {
  if (name == "ef") return Task::ef;
  if (name == "as") return Task::as;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected ef or as)");
}

std::span<const float> VideoSample::frame(std::size_t video, std::size_t t) const {
  const std::size_t size = height * width;
  return std::span<const float>(pixels).subspan((video * frames + t) * size, size);
}

std::array<double, kSeverityClasses> VideoSample::as_one_hot() const {
  if (!as_class) throw ConfigError("sample '" + id + "' has no AS label");
  std::array<double, kSeverityClasses> out{};
  out[*as_class] = 1.0;
  return out;
}

void VideoSample::validate() const {
  const auto fail = [this](const std::string& what) { throw ConfigError("sample '" + id + "': " + what); };
  if (videos == 0 || frames == 0 || height == 0 || width == 0) fail("empty dimensions");
  if (pixels.size() != videos * frames * height * width) fail("pixel count does not match K×T×H×W");
  for (float v : pixels)
    if (!(v >= 0.0f && v <= 1.0f)) fail("intensity outside [0, 1]");
  if (ef_label && !(*ef_label >= 0.0 && *ef_label <= 1.0)) fail("EF label outside [0, 1]");
  if (as_class && *as_class >= kSeverityClasses) fail("AS class out of range");
  if (!annotations.empty()) {
    if (annotations.size() != videos) fail("annotations must cover every video");
    for (const auto& a : annotations) {
      if (a.ed_mask.size() != height * width || a.es_mask.size() != height * width) fail("mask size mismatch");
      if (a.ed_index >= frames || a.es_index >= frames) fail("ED/ES index out of range");
      if (a.ed_index == a.es_index) fail("ED and ES indices coincide");
    }
  }
}

}  // namespace gemtrans

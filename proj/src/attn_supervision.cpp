#include "gemtrans/attn_supervision.hpp"

#include <algorithm>

#include "gemtrans/error.hpp"

namespace gemtrans {

std::string_view temporal_mode_name(TemporalMode mode) {
  return mode == TemporalMode::frames ? "frames" : "interval";
}

TemporalMode parse_temporal_mode(std::string_view name) {
  if (name == "frames") return TemporalMode::frames;
  if (name == "interval") return TemporalMode::interval;
  throw ConfigError("unknown temporal mode '" + std::string(name) + "' (expected frames or interval)");
}

void AttnLossWeights::validate() const {
  if (!(lambda_temporal >= 0.0 && lambda_temporal <= 1.0)) throw ConfigError("attn.lambda_temporal must be in [0, 1]");
  if (!(lambda_spatial >= 0.0 && lambda_spatial <= 1.0)) throw ConfigError("attn.lambda_spatial must be in [0, 1]");
}

CoarseMask coarsen_mask(std::span<const std::uint8_t> mask, std::size_t height, std::size_t width,
                        std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw ConfigError("mask " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch size " + std::to_string(patch));
  if (mask.size() != height * width) throw ShapeError("mask size does not match H×W");
  const std::size_t cols = width / patch;
  CoarseMask out((height / patch) * cols, 0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      if (mask[y * width + x]) out[(y / patch) * cols + x / patch] = 1;
  return out;
}

CoarseMask union_masks(const CoarseMask& a, const CoarseMask& b) {
  if (a.size() != b.size()) throw ShapeError("union of coarse masks with different lengths");
  CoarseMask out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] || b[i]) ? 1 : 0;
  return out;
}

std::vector<std::size_t> temporal_targets(std::size_t frames, std::size_t ed, std::size_t es, TemporalMode mode) {
  if (ed >= frames || es >= frames)
    throw ConfigError("ED/ES index out of range for " + std::to_string(frames) + " frames");
  if (mode == TemporalMode::frames) {
    if (ed == es) return {ed};
    return {std::min(ed, es), std::max(ed, es)};
  }
  std::vector<std::size_t> out;
  for (std::size_t t = std::min(ed, es); t <= std::max(ed, es); ++t) out.push_back(t);
  return out;
}

template <typename T>
Tensor<T> spatial_attention_loss(const Tensor<T>& attn, const CoarseMask& inside) {
  if (attn.rank() == 0 || attn.dim(attn.rank() - 1) != inside.size())
    throw ShapeError("spatial attention " + shape_str(attn.shape()) + " does not match a mask of " +
                     std::to_string(inside.size()) + " patches");
  std::vector<T> outside(inside.size());
  for (std::size_t i = 0; i < inside.size(); ++i) outside[i] = inside[i] ? T{0} : T{1};
  return sum(mul(square(attn), Tensor<T>::constant({inside.size()}, std::move(outside))));
}

template <typename T>
Tensor<T> temporal_attention_loss(const Tensor<T>& attn, std::size_t ed, std::size_t es, TemporalMode mode) {
  if (attn.rank() != 1) throw ShapeError("temporal attention must be a vector, got " + shape_str(attn.shape()));
  std::vector<T> target(attn.numel(), T{0});
  for (auto t : temporal_targets(attn.numel(), ed, es, mode)) target[t] = T{1};
  return sum(mul(square(add_scalar(attn, T{-1})), Tensor<T>::constant({attn.numel()}, std::move(target))));
}

std::vector<VideoTarget> supervision_targets(const VideoSample& sample, std::size_t patch) {
  std::vector<VideoTarget> out;
  for (const auto& a : sample.annotations) {
    out.push_back({union_masks(coarsen_mask(a.ed_mask, sample.height, sample.width, patch),
                               coarsen_mask(a.es_mask, sample.height, sample.width, patch)),
                   a.ed_index, a.es_index});
  }
  return out;
}

template <typename T>
AttentionLoss<T> total_attention_loss(const ForwardResult<T>& result, const std::vector<VideoTarget>& targets,
                                      const AttnLossWeights& weights) {
  AttentionLoss<T> out;
  out.spatial = Tensor<T>::scalar(T{0});
  out.temporal = Tensor<T>::scalar(T{0});
  if (targets.empty()) {
    out.total = Tensor<T>::scalar(T{0});
    return out;
  }
  const std::size_t videos = result.temporal_attention.dim(0);
  const std::size_t frames = result.temporal_attention.dim(1);
  if (targets.size() != videos) throw ShapeError("supervision targets do not cover every video");
  std::vector<Tensor<T>> spatial, temporal;
  for (std::size_t k = 0; k < videos; ++k) {
    const auto rows = slice(result.spatial_attention, 0, k * frames, (k + 1) * frames);
    spatial.push_back(spatial_attention_loss(rows, targets[k].union_mask));
    temporal.push_back(
        temporal_attention_loss(select(result.temporal_attention, 0, k), targets[k].ed, targets[k].es, weights.mode));
  }
  for (std::size_t k = 0; k < videos; ++k) {
    out.spatial = k == 0 ? spatial[0] : add(out.spatial, spatial[k]);
    out.temporal = k == 0 ? temporal[0] : add(out.temporal, temporal[k]);
  }
  out.total = add(scale(out.temporal, static_cast<T>(weights.lambda_temporal)),
                  scale(out.spatial, static_cast<T>(weights.lambda_spatial)));
  return out;
}

#define GEMTRANS_INSTANTIATE_ATTN(T)                                                                        \
  template Tensor<T> spatial_attention_loss<T>(const Tensor<T>&, const CoarseMask&);                         \
  template Tensor<T> temporal_attention_loss<T>(const Tensor<T>&, std::size_t, std::size_t, TemporalMode);   \
  template AttentionLoss<T> total_attention_loss<T>(const ForwardResult<T>&, const std::vector<VideoTarget>&, \
                                                    const AttnLossWeights&);

GEMTRANS_INSTANTIATE_ATTN(float)
GEMTRANS_INSTANTIATE_ATTN(double)

#undef GEMTRANS_INSTANTIATE_ATTN

}  // namespace gemtrans

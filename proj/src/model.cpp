#include "gemtrans/model.hpp"

#include <cmath>
#include <random>

#include "gemtrans/error.hpp"
#include "gemtrans/random.hpp"

namespace gemtrans {

std::string_view level_prefix(Level level) {
  switch (level) {
    case Level::spatial: return "ste";
    case Level::temporal: return "tte";
    case Level::video: return "vte";
  }
  return "";
}

std::size_t EncoderConfig::slots(Level level) const {
  switch (level) {
    case Level::spatial: return spatial_slots ? spatial_slots : patches_per_frame() + 1;
    case Level::temporal: return temporal_slots ? temporal_slots : frames + 1;
    case Level::video: return video_slots ? video_slots : videos + 1;
  }
  return 0;
}

void EncoderConfig::validate() const {
  if (patch_size == 0) throw ConfigError("model.patch_size must be positive");
  if (height == 0 || width == 0) throw ConfigError("frame size must be positive");
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw ConfigError("frame " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
    throw ConfigError("model.embed_dim must be a positive multiple of model.heads");
  if (layers < 1) throw ConfigError("model.layers must be at least 1");
  if (mlp_hidden == 0) throw ConfigError("model.mlp_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  if (!(layernorm_eps > 0.0)) throw ConfigError("model.layernorm_eps must be positive");
  if (videos == 0 || frames == 0) throw ConfigError("videos and frames must be positive");
  for (Level level : {Level::spatial, Level::temporal, Level::video}) {
    const std::size_t needed = level == Level::spatial ? patches_per_frame() + 1
                               : level == Level::temporal ? frames + 1
                                                          : videos + 1;
    if (slots(level) < needed) {
      throw ConfigError(std::string(level_prefix(level)) + " has " + std::to_string(slots(level)) +
                        " positional slots, needs " + std::to_string(needed));
    }
  }
}

std::vector<ParamSpec> parameter_layout(const EncoderConfig& c) {
  const std::size_t d = c.embed_dim;
  std::vector<ParamSpec> out;
  auto add = [&out](std::string path, Shape shape) { out.push_back({std::move(path), std::move(shape)}); };
  auto norm = [&](const std::string& p) {
    add(p + ".gain", {d});
    add(p + ".bias", {d});
  };
  auto dense = [&](const std::string& p, std::size_t in, std::size_t o) {
    add(p + ".weight", {in, o});
    add(p + ".bias", {o});
  };
  for (Level level : {Level::spatial, Level::temporal, Level::video}) {
    const std::string prefix(level_prefix(level));
    add(prefix + ".cls", {d});
    add(prefix + ".pos", {c.slots(level), d});
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string block = prefix + ".block" + std::to_string(l);
      norm(block + ".ln1");
      for (const char* proj : {"q", "k", "v", "out"}) dense(block + ".attn." + proj, d, d);
      norm(block + ".ln2");
      dense(block + ".mlp.fc1", d, c.mlp_hidden);
      dense(block + ".mlp.fc2", c.mlp_hidden, d);
    }
    norm(prefix + ".final_ln");
  }
  dense("ste.patch_proj", c.patch_pixels(), d);
  dense("head.ef.fc1", d, d);
  dense("head.ef.fc2", d, 1);
  dense("head.as.fc1", d, d);
  dense("head.as.fc2", d, kSeverityClasses);
  return out;
}

template <typename T>
ParameterStore<T> init_parameters(const EncoderConfig& config, std::uint64_t seed, double embedding_std) {
  config.validate();
  ParameterStore<T> store;
  for (auto& spec : parameter_layout(config)) {
    std::vector<T> values(numel(spec.shape), T{0});
    const std::string_view path = spec.path;
    if (path.ends_with(".gain")) {
      std::fill(values.begin(), values.end(), T{1});
    } else if (!path.ends_with(".bias")) {
      const bool embedding = path.ends_with(".cls") || path.ends_with(".pos");
      const double sigma = embedding ? embedding_std : 0.02;
      std::mt19937_64 rng(derive_seed(seed, path));
      if (sigma > 0.0)
        for (auto& v : values) v = static_cast<T>(truncated_normal(rng, sigma));
    }
    store.add(std::move(spec.path), std::move(spec.shape), std::move(values));
  }
  return store;
}

template <typename T>
GemTransModel<T>::GemTransModel(EncoderConfig config, std::uint64_t seed)
    : config_(config), params_(init_parameters<T>(config, seed)) {}

template <typename T>
GemTransModel<T>::GemTransModel(EncoderConfig config, ParameterStore<T> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  validate_layout(params_, parameter_layout(config_), {"proto."});
}

std::vector<float> patchify(std::span<const float> frame, std::size_t height, std::size_t width,
                            std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("frame " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  if (frame.size() != height * width) throw ShapeError("patchify: frame size does not match H×W");
  const std::size_t cols = width / patch;
  const std::size_t count = (height / patch) * cols;
  std::vector<float> out(count * patch * patch);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t r0 = (s / cols) * patch, c0 = (s % cols) * patch;
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x)
        out[(s * patch + y) * patch + x] = frame[(r0 + y) * width + c0 + x];
  }
  return out;
}

std::vector<float> stitch(std::span<const float> patches, std::size_t height, std::size_t width,
                          std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw ConfigError("stitch: frame is not divisible by the patch size");
  if (patches.size() != height * width) throw ShapeError("stitch: patch data does not match H×W");
  const std::size_t cols = width / patch;
  std::vector<float> frame(height * width);
  for (std::size_t s = 0; s < patches.size() / (patch * patch); ++s) {
    const std::size_t r0 = (s / cols) * patch, c0 = (s % cols) * patch;
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x)
        frame[(r0 + y) * width + c0 + x] = patches[(s * patch + y) * patch + x];
  }
  return frame;
}

template <typename T>
Tensor<T> tokenize(const Tensor<T>& patches, Binding<T>& params) {
  return linear(patches, params("ste.patch_proj.weight"), params("ste.patch_proj.bias"));
}

template <typename T>
AttentionRecord ForwardResult<T>::record() const {
  AttentionRecord r;
  const auto& ts = temporal_attention.shape();
  r.videos = ts[0];
  r.frames = ts[1];
  r.patches = spatial_attention.shape()[1];
  const auto sv = spatial_attention.data();
  for (std::size_t f = 0; f < r.videos * r.frames; ++f)
    r.spatial.emplace_back(sv.begin() + static_cast<std::ptrdiff_t>(f * r.patches),
                           sv.begin() + static_cast<std::ptrdiff_t>((f + 1) * r.patches));
  const auto tv = temporal_attention.data();
  for (std::size_t k = 0; k < r.videos; ++k)
    r.temporal.emplace_back(tv.begin() + static_cast<std::ptrdiff_t>(k * r.frames),
                            tv.begin() + static_cast<std::ptrdiff_t>((k + 1) * r.frames));
  const auto vv = video_attention.data();
  r.video.assign(vv.begin(), vv.end());
  return r;
}

template <typename T>
ForwardPass<T>::ForwardPass(const EncoderConfig& config, Binding<T>& params, ForwardOptions options)
    : config_(config), params_(params), options_(options) {}

template <typename T>
Tensor<T> ForwardPass<T>::maybe_dropout(const Tensor<T>& x) {
  if (!options_.training || config_.dropout == 0.0) return x;
  return dropout(x, config_.dropout, derive_seed(options_.dropout_seed, dropout_calls_++));
}

template <typename T>
Tensor<T> ForwardPass<T>::ln(const std::string& prefix, const Tensor<T>& x) {
  return layernorm(x, params_(prefix + ".gain"), params_(prefix + ".bias"),
                   static_cast<T>(config_.layernorm_eps));
}

template <typename T>
Tensor<T> ForwardPass<T>::attention_block(const std::string& prefix, const Tensor<T>& x, Tensor<T>* probs) {
  const std::size_t batch = x.dim(0), seq = x.dim(1), d = x.dim(2);
  const std::size_t heads = config_.heads, dh = d / heads;
  auto split_heads = [&](const Tensor<T>& y) {
    return reshape(permute(reshape(y, {batch, seq, heads, dh}), {0, 2, 1, 3}), {batch * heads, seq, dh});
  };
  auto project = [&](const char* name) {
    return linear(x, params_(prefix + "." + name + ".weight"), params_(prefix + "." + name + ".bias"));
  };
  const auto q = split_heads(project("q"));
  const auto k = split_heads(project("k"));
  const auto v = split_heads(project("v"));
  const auto weights = softmax(scale(bmm(q, k, true), T{1} / std::sqrt(static_cast<T>(dh))), 2);
  if (probs) *probs = weights;
  auto ctx = bmm(maybe_dropout(weights), v);
  ctx = reshape(permute(reshape(ctx, {batch, heads, seq, dh}), {0, 2, 1, 3}), {batch, seq, d});
  return linear(ctx, params_(prefix + ".out.weight"), params_(prefix + ".out.bias"));
}

template <typename T>
Tensor<T> ForwardPass<T>::mlp_block(const std::string& prefix, const Tensor<T>& x) {
  auto h = gelu(linear(x, params_(prefix + ".fc1.weight"), params_(prefix + ".fc1.bias")));
  h = maybe_dropout(h);
  return linear(h, params_(prefix + ".fc2.weight"), params_(prefix + ".fc2.bias"));
}

template <typename T>
EncoderOutput<T> ForwardPass<T>::encode(Level level, const Tensor<T>& tokens) {
  const bool single = tokens.rank() == 2;
  if (!single && tokens.rank() != 3) throw ShapeError("encode: tokens must be [n, d] or [B, n, d]");
  const Tensor<T> x = single ? reshape(tokens, {1, tokens.dim(0), tokens.dim(1)}) : tokens;
  const std::size_t batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (d != config_.embed_dim) throw ShapeError("encode: token width does not match embed_dim");
  const std::string prefix(level_prefix(level));
  const auto& pos = params_(prefix + ".pos");
  const std::size_t seq = n + 1;
  if (seq > pos.dim(0)) {
    throw CapacityError(prefix + ": " + std::to_string(n) + " tokens plus cls exceed " +
                        std::to_string(pos.dim(0)) + " positional slots");
  }

  const auto cls = broadcast_to(reshape(params_(prefix + ".cls"), {1, 1, d}), {batch, 1, d});
  auto h = add(concat<T>({cls, x}, 1), slice(pos, 0, 0, seq));
  Tensor<T> last_probs;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string block = prefix + ".block" + std::to_string(l);
    const bool last = l + 1 == config_.layers;
    h = add(h, attention_block(block + ".attn", ln(block + ".ln1", h), last ? &last_probs : nullptr));
    h = add(h, mlp_block(block + ".mlp", ln(block + ".ln2", h)));
  }
  const auto out = ln(prefix + ".final_ln", h);

  EncoderOutput<T> result;
  result.summary = select(out, 1, 0);
  result.tokens = slice(out, 1, 1, seq);
  // cls row of every head, averaged over heads, cls->cls dropped, renormalized.
  const auto cls_rows = select(reshape(last_probs, {batch, config_.heads, seq, seq}), 2, 0);
  const auto to_tokens = slice(mean(cls_rows, 1), 1, 1, seq);
  result.cls_attention = div(to_tokens, reshape(sum(to_tokens, 1), {batch, 1}));
  if (single) {
    result.summary = reshape(result.summary, {d});
    result.tokens = reshape(result.tokens, {n, d});
    result.cls_attention = reshape(result.cls_attention, {n});
  }
  return result;
}

template <typename T>
EncoderOutput<T> ForwardPass<T>::spatial(const VideoSample& sample) {
  const std::size_t p = config_.patch_size;
  const std::size_t frames = sample.videos * sample.frames;
  std::vector<T> data;
  std::size_t per_frame = 0;
  for (std::size_t k = 0; k < sample.videos; ++k) {
    for (std::size_t t = 0; t < sample.frames; ++t) {
      const auto patches = patchify(sample.frame(k, t), sample.height, sample.width, p);
      per_frame = patches.size() / (p * p);
      data.insert(data.end(), patches.begin(), patches.end());
    }
  }
  const auto patches = Tensor<T>::constant({frames, per_frame, p * p}, std::move(data));
  return encode(Level::spatial, tokenize(patches, params_));
}

template <typename T>
EncoderOutput<T> ForwardPass<T>::temporal(const Tensor<T>& frame_embeddings) {
  if (frame_embeddings.rank() != 3) throw ShapeError("temporal: expected [K, T, d]");
  return encode(Level::temporal, frame_embeddings);
}

template <typename T>
EncoderOutput<T> ForwardPass<T>::video(const Tensor<T>& video_embeddings) {
  if (video_embeddings.rank() != 2) throw ShapeError("video: expected [K, d]");
  return encode(Level::video, reshape(video_embeddings, {1, video_embeddings.dim(0), video_embeddings.dim(1)}));
}

template <typename T>
Tensor<T> ForwardPass<T>::ef_logit(const Tensor<T>& u) {
  const auto h = gelu(linear(u, params_("head.ef.fc1.weight"), params_("head.ef.fc1.bias")));
  return linear(h, params_("head.ef.fc2.weight"), params_("head.ef.fc2.bias"));
}

template <typename T>
Tensor<T> ForwardPass<T>::as_logits(const Tensor<T>& u) {
  const auto h = gelu(linear(u, params_("head.as.fc1.weight"), params_("head.as.fc1.bias")));
  return linear(h, params_("head.as.fc2.weight"), params_("head.as.fc2.bias"));
}

template <typename T>
ForwardResult<T> ForwardPass<T>::run(const VideoSample& sample, Task task) {
  const std::size_t videos = sample.videos, frames = sample.frames, d = config_.embed_dim;
  ForwardResult<T> r;
  r.task = task;

  auto ste = spatial(sample);
  r.frame_embeddings = ste.summary;
  r.spatial_attention = ste.cls_attention;
  r.patch_tokens = ste.tokens;

  auto tte = temporal(reshape(ste.summary, {videos, frames, d}));
  r.video_embeddings = tte.summary;
  r.temporal_attention = tte.cls_attention;
  r.frame_tokens = tte.tokens;

  auto vte = video(tte.summary);
  r.patient_embedding = reshape(vte.summary, {d});
  r.video_attention = reshape(vte.cls_attention, {videos});

  if (task == Task::ef) {
    r.logits = ef_logit(r.patient_embedding);
    r.prediction = sigmoid(r.logits);
  } else {
    r.logits = as_logits(r.patient_embedding);
    r.prediction = softmax(r.logits, 0);
  }
  return r;
}

template <typename T>
Tensor<T> task_loss(const ForwardResult<T>& result, const VideoSample& sample) {
  if (result.task == Task::ef) {
    if (!sample.ef_label) throw ConfigError("sample '" + sample.id + "' has no EF label");
    const auto target = Tensor<T>::constant({1}, {static_cast<T>(*sample.ef_label)});
    return sum(square(sub(result.prediction, target)));
  }
  if (!sample.as_class) throw ConfigError("sample '" + sample.id + "' has no AS label");
  const std::size_t label = *sample.as_class;
  return cross_entropy_with_logits(reshape(result.logits, {1, kSeverityClasses}), std::span(&label, 1));
}

#define GEMTRANS_INSTANTIATE_MODEL(T)                                                  \
  template ParameterStore<T> init_parameters<T>(const EncoderConfig&, std::uint64_t, double);   \
  template class GemTransModel<T>;                                                      \
  template Tensor<T> tokenize<T>(const Tensor<T>&, Binding<T>&);                        \
  template struct ForwardResult<T>;                                                     \
  template class ForwardPass<T>;                                                        \
  template Tensor<T> task_loss<T>(const ForwardResult<T>&, const VideoSample&);

GEMTRANS_INSTANTIATE_MODEL(float)
GEMTRANS_INSTANTIATE_MODEL(double)

#undef GEMTRANS_INSTANTIATE_MODEL

}  // namespace gemtrans

#include "gemtrans/parameters.hpp"

#include <cstring>

#include "gemtrans/error.hpp"

namespace gemtrans {

template <typename T>
void ParameterStore<T>::add(std::string path, Shape shape, std::vector<T> values) {
  if (contains(path)) throw ConfigError("duplicate parameter path '" + path + "'");
  set(std::move(path), std::move(shape), std::move(values));
}

template <typename T>
void ParameterStore<T>::set(std::string path, Shape shape, std::vector<T> values) {
  if (path.empty()) throw ConfigError("empty parameter path");
  if (numel(shape) != values.size()) {
    throw ShapeError("parameter '" + path + "': shape " + shape_str(shape) + " holds " +
                     std::to_string(numel(shape)) + " values, got " + std::to_string(values.size()));
  }
  params_.insert_or_assign(std::move(path), Parameter<T>{std::move(shape), std::move(values)});
}

template <typename T>
const Parameter<T>& ParameterStore<T>::at(std::string_view path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + std::string(path) + "'");
  return it->second;
}

template <typename T>
Parameter<T>& ParameterStore<T>::at(std::string_view path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + std::string(path) + "'");
  return it->second;
}

template <typename T>
void ParameterStore<T>::erase_prefix(std::string_view prefix) {
  for (auto it = params_.begin(); it != params_.end();) {
    if (std::string_view(it->first).starts_with(prefix))
      it = params_.erase(it);
    else
      ++it;
  }
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.values.size();
  return n;
}

template <typename T>
std::vector<std::string> ParameterStore<T>::paths() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [path, _] : params_) out.push_back(path);
  return out;
}

template <typename T>
std::uint64_t ParameterStore<T>::checksum() const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001B3ull;
    }
  };
  for (const auto& [path, p] : params_) {
    feed(path.data(), path.size());
    for (auto d : p.shape) feed(&d, sizeof d);
    feed(p.values.data(), p.values.size() * sizeof(T));
  }
  return h;
}

template <typename T>
GradientMap<T> ParameterStore<T>::zero_gradients() const {
  GradientMap<T> out;
  for (const auto& [path, p] : params_) out.emplace(path, std::vector<T>(p.values.size(), T{0}));
  return out;
}

template <typename T>
const Tensor<T>& Binding<T>::operator()(std::string_view path) {
  auto it = bound_.find(path);
  if (it != bound_.end()) return it->second;
  const auto& p = store_->at(path);
  auto leaf = track_ ? Tensor<T>::variable(p.shape, p.values) : Tensor<T>::constant(p.shape, p.values);
  return bound_.emplace(std::string(path), std::move(leaf)).first->second;
}

template <typename T>
void Binding<T>::accumulate_into(GradientMap<T>& total) const {
  for (const auto& [path, leaf] : bound_) {
    if (!leaf.has_grad()) continue;
    auto& dst = total[path];
    if (dst.empty()) dst.assign(leaf.numel(), T{0});
    const auto g = leaf.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

template <typename T>
GradientMap<T> Binding<T>::gradients() const {
  GradientMap<T> out;
  accumulate_into(out);
  return out;
}

template <typename T>
void accumulate(GradientMap<T>& total, const GradientMap<T>& part) {
  for (const auto& [path, g] : part) {
    auto& dst = total[path];
    if (dst.empty()) dst.assign(g.size(), T{0});
    if (dst.size() != g.size()) throw ShapeError("gradient size mismatch for '" + path + "'");
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Binding<float>;
template class Binding<double>;
template void accumulate<float>(GradientMap<float>&, const GradientMap<float>&);
template void accumulate<double>(GradientMap<double>&, const GradientMap<double>&);

}  // namespace gemtrans

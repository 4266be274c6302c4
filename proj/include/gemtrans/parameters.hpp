#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gemtrans/tensor.hpp"

namespace gemtrans {

template <typename T>
struct Parameter {
  Shape shape;
  std::vector<T> values;
};

template <typename T>
using GradientMap = std::map<std::string, std::vector<T>, std::less<>>;

/// Named parameters keyed by dot-separated path, iterated in lexicographic order.
///
/// The store holds plain values. A forward pass reads it through a Binding, so
/// several passes can share one store read-only while each keeps its own graph
/// and gradient buffers. Only the optimizer (or a loader) mutates values.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Parameter<T>, std::less<>>;

  void add(std::string path, Shape shape, std::vector<T> values);
  // Inserts or replaces.
  void set(std::string path, Shape shape, std::vector<T> values);
  bool contains(std::string_view path) const { return params_.find(path) != params_.end(); }
  const Parameter<T>& at(std::string_view path) const;
  Parameter<T>& at(std::string_view path);
  void erase_prefix(std::string_view prefix);

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::vector<std::string> paths() const;
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [path, p] : params_)
      out.add(path, p.shape, std::vector<U>(p.values.begin(), p.values.end()));
    return out;
  }

  // FNV-1a over paths, shapes and value bytes.
  std::uint64_t checksum() const;
  GradientMap<T> zero_gradients() const;

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.params_.size() != b.params_.size()) return false;
    auto ia = a.params_.begin();
    for (auto ib = b.params_.begin(); ib != b.params_.end(); ++ia, ++ib) {
      if (ia->first != ib->first || ia->second.shape != ib->second.shape ||
          ia->second.values != ib->second.values)
        return false;
    }
    return true;
  }

 private:
  Map params_;
};

/// Per-pass view of a ParameterStore: each requested path becomes one leaf
/// tensor (created on first use) that owns its own gradient buffer.
template <typename T>
class Binding {
 public:
  explicit Binding(const ParameterStore<T>& store, bool track_gradients = true)
      : store_(&store), track_(track_gradients) {}

  const Tensor<T>& operator()(std::string_view path);
  const ParameterStore<T>& store() const { return *store_; }
  bool tracks_gradients() const { return track_; }

  // Adds gradients of every bound leaf into `total` (missing keys are created).
  void accumulate_into(GradientMap<T>& total) const;
  GradientMap<T> gradients() const;

 private:
  const ParameterStore<T>* store_;
  bool track_;
  std::map<std::string, Tensor<T>, std::less<>> bound_;
};

// Sums `part` into `total`, element by element, in key order.
template <typename T>
void accumulate(GradientMap<T>& total, const GradientMap<T>& part);

}  // namespace gemtrans

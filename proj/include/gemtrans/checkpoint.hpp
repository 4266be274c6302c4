#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "gemtrans/parameters.hpp"

// Versioned parameter container.
//
//   "GEMT"            4 bytes
//   version           u32
//   repeated until end of stream:
//     path length     u32
//     path            UTF-8 bytes
//     rank            u32
//     dims            rank × u32
//     values          product(dims) × f32
//
// All integers and floats are little-endian. Entries are written in
// lexicographic path order.

namespace gemtrans {

inline constexpr char kCheckpointMagic[4] = {'G', 'E', 'M', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_container(std::ostream& out, const ParameterStore<float>& params);
ParameterStore<float> read_container(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& params);
ParameterStore<float> load_checkpoint(const std::filesystem::path& path);

struct ParamSpec {
  std::string path;
  Shape shape;
};

// Throws CheckpointError unless every expected path is present with the
// expected shape. Extra entries are allowed only under `optional_prefixes`.
template <typename T>
void validate_layout(const ParameterStore<T>& loaded, const std::vector<ParamSpec>& expected,
                     const std::vector<std::string>& optional_prefixes = {});

}  // namespace gemtrans

#include "gemtrans/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>

#include "gemtrans/error.hpp"

namespace gemtrans {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

bool get_u32(std::istream& in, std::uint32_t& v) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) return false;
  v = static_cast<std::uint32_t>(bytes[0]) | static_cast<std::uint32_t>(bytes[1]) << 8 |
      static_cast<std::uint32_t>(bytes[2]) << 16 | static_cast<std::uint32_t>(bytes[3]) << 24;
  return true;
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw CheckpointError(std::string(what) + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_container(std::ostream& out, const ParameterStore<float>& params) {
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& [path, p] : params) {
    put_u32(out, checked_u32(path.size(), "path length"));
    out.write(path.data(), static_cast<std::streamsize>(path.size()));
    put_u32(out, checked_u32(p.shape.size(), "rank"));
    for (auto d : p.shape) put_u32(out, checked_u32(d, "dimension"));
    for (float v : p.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw CheckpointError("write failed");
}

ParameterStore<float> read_container(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("bad magic: not a GEMT container");
  std::uint32_t version = 0;
  if (!get_u32(in, version)) throw CheckpointError("truncated header");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported container version " + std::to_string(version));

  ParameterStore<float> params;
  for (;;) {
    std::uint32_t path_len = 0;
    if (!get_u32(in, path_len)) {
      if (in.eof() && in.gcount() == 0) break;
      throw CheckpointError("truncated entry header");
    }
    std::string path(path_len, '\0');
    std::uint32_t rank = 0;
    if (!in.read(path.data(), path_len) || !get_u32(in, rank)) throw CheckpointError("truncated entry");
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      if (!get_u32(in, v)) throw CheckpointError("truncated shape for '" + path + "'");
      d = v;
    }
    std::vector<float> values(numel(shape));
    for (auto& v : values) {
      std::uint32_t bits = 0;
      if (!get_u32(in, bits)) throw CheckpointError("truncated values for '" + path + "'");
      v = std::bit_cast<float>(bits);
    }
    if (params.contains(path)) throw CheckpointError("duplicate entry '" + path + "'");
    params.add(std::move(path), std::move(shape), std::move(values));
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  write_container(out, params);
}

ParameterStore<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  return read_container(in);
}

template <typename T>
void validate_layout(const ParameterStore<T>& loaded, const std::vector<ParamSpec>& expected,
                     const std::vector<std::string>& optional_prefixes) {
  std::set<std::string, std::less<>> known;
  for (const auto& spec : expected) {
    if (!loaded.contains(spec.path)) throw CheckpointError("checkpoint is missing '" + spec.path + "'");
    const auto& shape = loaded.at(spec.path).shape;
    if (shape != spec.shape) {
      throw CheckpointError("shape mismatch for '" + spec.path + "': checkpoint " + shape_str(shape) +
                            ", config expects " + shape_str(spec.shape));
    }
    known.insert(spec.path);
  }
  for (const auto& [path, _] : loaded) {
    if (known.contains(path)) continue;
    bool optional = false;
    for (const auto& prefix : optional_prefixes) optional = optional || path.starts_with(prefix);
    if (!optional) throw CheckpointError("unexpected checkpoint entry '" + path + "'");
  }
}

template void validate_layout<float>(const ParameterStore<float>&, const std::vector<ParamSpec>&,
                                     const std::vector<std::string>&);
template void validate_layout<double>(const ParameterStore<double>&, const std::vector<ParamSpec>&,
                                      const std::vector<std::string>&);

}  // namespace gemtrans

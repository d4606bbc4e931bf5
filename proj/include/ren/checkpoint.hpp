#pragma once

// Binary parameter checkpoint.
//
//   magic    8 bytes  "RENCKPT\0"
//   version  u32      1
//   count    u64      number of tensors
//   per tensor: name_len u32, name bytes, rows u64, cols u64, rows*cols f64
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ren/errors.hpp"
#include "ren/networks.hpp"

namespace ren {

inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw FormatError("checkpoint: truncated");
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& tensors) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(os, kCheckpointVersion);
  detail::write_le<std::uint64_t>(os, tensors.size());
  for (const auto& t : tensors) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_le<std::uint64_t>(os, t.value.rows());
    detail::write_le<std::uint64_t>(os, t.value.cols());
    for (double v : t.value.values()) detail::write_le<double>(os, v);
  }
  if (!os) throw FormatError("checkpoint: write failed");
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = detail::read_le<std::uint64_t>(is);
  std::vector<NamedTensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("checkpoint: truncated name");
    const auto rows = detail::read_le<std::uint64_t>(is);
    const auto cols = detail::read_le<std::uint64_t>(is);
    std::vector<double> values(rows * cols);
    for (double& v : values) v = detail::read_le<double>(is);
    out.push_back({std::move(name), Tensor(rows, cols, std::move(values))});
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, tensors);
}

inline std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

/// Appends the tensors of `ps` with names qualified by `scope`, e.g. "student/F.layer0.weight".
inline void collect(std::vector<NamedTensor>& out, const std::string& scope, const ParamSet& ps) {
  for (const auto& t : ps.tensors) out.push_back({scope + "/" + t.name, t.value});
}

/// Overwrites `ps` from a checkpoint; every tensor must be present with a matching shape.
inline void restore(ParamSet& ps, const std::string& scope, const std::vector<NamedTensor>& saved) {
  for (auto& t : ps.tensors) {
    const std::string key = scope + "/" + t.name;
    const NamedTensor* hit = nullptr;
    for (const auto& s : saved) {
      if (s.name == key) hit = &s;
    }
    if (hit == nullptr) throw FormatError("checkpoint: missing tensor " + key);
    if (hit->value.shape() != t.value.shape()) {
      throw DimensionError("checkpoint: " + key + " has shape " + to_string(hit->value.shape()) +
                           ", expected " + to_string(t.value.shape()));
    }
    t.value = hit->value;
  }
}

}  // namespace ren

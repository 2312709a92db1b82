#pragma once

// Versioned binary container mapping names to shaped float64 arrays, with a
// JSON metadata header (architecture config, training step, ...). Arrays are
// written column-major, little-endian, regardless of the in-memory scalar
// type, so float32-trained checkpoints load into float64 models unchanged.
//
// Layout:
//   magic   "AMGPCKPT"            8 bytes
//   u32     container version     (currently 1)
//   u64     meta length, meta JSON bytes
//   u64     entry count
//   entry:  u32 name length, name bytes, u32 rows, u32 cols,
//           rows*cols float64 values (column-major)

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "amorgp/binio.hpp"
#include "amorgp/tensor.hpp"

namespace amorgp {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[] = "AMGPCKPT";

struct CheckpointData {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;

  const Eigen::MatrixXd* find(const std::string& name) const {
    for (const auto& [n, m] : arrays)
      if (n == name) return &m;
    return nullptr;
  }
};

inline void save_checkpoint(const std::string& path,
                            const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  detail::write_pod<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = data.meta.dump();
  detail::write_pod<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  detail::write_pod<std::uint64_t>(out, data.arrays.size());
  for (const auto& [name, m] : data.arrays) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != kCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const auto meta_len = detail::read_pod<std::uint64_t>(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  CheckpointData data;
  data.meta = nlohmann::json::parse(meta);
  const auto count = detail::read_pod<std::uint64_t>(in);
  data.arrays.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = detail::read_pod<std::uint32_t>(in);
    const auto cols = detail::read_pod<std::uint32_t>(in);
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
    data.arrays.emplace_back(std::move(name), std::move(m));
  }
  return data;
}

/// Append every parameter of the store under an optional name prefix.
template <class S>
void dump_params(CheckpointData& data, const ParamStore<S>& params,
                 const std::string& prefix = "") {
  for (const auto* p : params.nodes())
    data.arrays.emplace_back(prefix + p->name, p->val.template cast<double>());
}

/// Restore parameters by name; every parameter must be present with the
/// exact stored shape.
template <class S>
void fill_params(ParamStore<S>& params, const CheckpointData& data,
                 const std::string& prefix = "") {
  for (auto* p : params.nodes()) {
    const Eigen::MatrixXd* m = data.find(prefix + p->name);
    if (!m)
      throw std::runtime_error("checkpoint: missing parameter '" + p->name + "'");
    if (m->rows() != p->val.rows() || m->cols() != p->val.cols())
      throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "'");
    p->val = m->template cast<S>();
  }
}

/// FNV-1a 64-bit content hash, hex-encoded; used by run manifests.
inline std::string file_content_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash missing file: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace amorgp

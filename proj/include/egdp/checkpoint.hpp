#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "egdp/tensor.hpp"

namespace egdp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// File layout:
//   "EGDP" | u32 version (LE) | u64 header length (LE) | header JSON | payload
// The header holds {"tensors": [{name, shape, dtype: "f64", offset, bytes}],
// "meta": {...}}; the payload is every tensor's doubles, little-endian, in
// header order.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

// Writes to a sibling temp file then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Verifies magic, version, header and payload length before building any
// tensor. Throws LoadError (VersionError for a version mismatch).
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Atomic text write (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace egdp

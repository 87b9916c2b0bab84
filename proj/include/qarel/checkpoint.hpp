#pragma once

// Portable parameter container. Layout (all integers little-endian, values
// IEEE-754 binary64 little-endian; see docs/formats.md):
//
//   "QARELCKP"                      8-byte magic
//   u32 version                     currently 1
//   u32 M, then M x { str key, str value }          metadata
//   u32 T, then T x { str name, u32 rank, u64 dims[rank], f64 values[] }
//
// where str = u32 byte length followed by the bytes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "qarel/tensor.hpp"

namespace qarel {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;  ///< gradients are not stored

  const Tensor& tensor(const std::string& name) const;
  const std::string& meta(const std::string& key) const;
};

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace qarel

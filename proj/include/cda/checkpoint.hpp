#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "cda/tensor.hpp"

namespace cda {

inline constexpr const char* kCheckpointMagic = "CDA-CKPT-1";

/// Flat checkpoint contents: named tensors plus named text blobs (config,
/// random stream state, ...). Tensor values are stored as hexadecimal floats,
/// so a write/read cycle is bit-exact.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> texts;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& content);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cda

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mistere/value.hpp"

// Binary checkpoint layout (all integers little-endian):
//
//   "MSTE"                      4 bytes
//   version                     u32
//   repeated, names ascending:
//     name length               u32
//     name                      UTF-8 bytes
//     rank                      u32
//     dims                      rank x u64
//     values                    prod(dims) x IEEE-754 binary64

namespace mistere {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, Tensor>;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_tensors(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_tensors(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params);
/// Overwrites parameter values; names and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, ParameterSet& params);

}  // namespace mistere

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stiformer/model.h"

namespace stif {

// Checkpoint layout, all integers little-endian:
//
//   magic        8 bytes  "STIFCKPT"
//   version      u32      kCheckpointVersion
//   meta_len     u32      followed by meta_len bytes of ModelConfig::to_text()
//   count        u32      number of tensors
//   per tensor:  u32 name_len, name bytes, u8 dtype (1 = float64),
//                u32 rank, u64 extent[rank], float64 payload (row-major)
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeFloat64 = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointContents {
  std::string metadata;
  std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointContents& contents);
CheckpointContents decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams& params);

struct LoadedModel {
  ModelConfig config;
  ModelParams params;
};

/// Rebuilds parameters for the stored config; every expected tensor must be
/// present with a matching shape.
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace stif

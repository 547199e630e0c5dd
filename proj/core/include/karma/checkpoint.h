#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "karma/tensor.h"

namespace karma {

inline constexpr uint32_t kCheckpointVersion = 1;

// Sits beside the tensor file as "<path>.meta.json".
struct CheckpointHeader {
  std::string kind;  // "reward", "policy", "optimizer"
  std::string mode;  // serialization mode, or empty
  uint64_t vocab_checksum = 0;
  nlohmann::json config = nlohmann::json::object();
  uint32_t format_version = kCheckpointVersion;
};

// KRMA byte layout: "KRMA", u32 version, u32 count, then per tensor u16 name
// length, name, u8 rank, u32 dims, little-endian f32 values.
std::string encode_tensors(const ParameterStore& store);
// Throws Error(kIncompatibleCheckpoint) on bad magic, version or truncation.
ParameterStore decode_tensors(std::string_view bytes);

nlohmann::json header_to_json(const CheckpointHeader& h);
CheckpointHeader header_from_json(const nlohmann::json& j);

void save_checkpoint(const ParameterStore& store, const CheckpointHeader& header,
                     const std::string& path);

struct Checkpoint {
  CheckpointHeader header;
  ParameterStore store;
};

// Verifies the header's vocab checksum when `expected_checksum` is given.
Checkpoint load_checkpoint(const std::string& path,
                           std::optional<uint64_t> expected_checksum = std::nullopt);

}  // namespace karma

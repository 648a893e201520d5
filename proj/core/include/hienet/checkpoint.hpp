#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hienet/model.hpp"

namespace hienet {

/// Checkpoint layout (little-endian):
///   "HIEN", u16 version, spec block (u64 segment_samples, u32 layer count,
///   per layer u8 kind, u8 padding, u64 size/stride/inputs/outputs),
///   u64 seed, u32 epochs, then per parameterized layer its arrays as
///   u64 count followed by f64 values. Batch-norm blocks also carry
///   f64 epsilon, f64 momentum and u8 has_running_stats.
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<char> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace hienet

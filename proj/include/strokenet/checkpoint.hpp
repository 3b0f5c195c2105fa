#pragma once

// "STKF" checkpoint: magic, u32 version, u32-length key=value config block, u32 parameter
// count, then per parameter u16 name length, name, u8 rank, u32 dims, f64 data.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "strokenet/model.hpp"
#include "strokenet/text.hpp"

namespace strokenet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  ModelConfig config;
  // Config-block keys that are not model.* keys (run and preprocessing settings).
  KeyValues extra;
};

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const ModelConfig& config,
                                            const KeyValues& extra = {});
// Throws CorruptFileError with the byte offset on bad magic, version or truncation.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                             const std::string& source = "checkpoint");

void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path, const KeyValues& extra = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads and checks that the stored parameters have exactly the layout `expected`
// would build. Throws CheckpointMismatchError naming the first difference.
Checkpoint load_checkpoint_for(const std::filesystem::path& path, const ModelConfig& expected);
void check_layout(const ModelParams& params, const ModelConfig& expected);

}  // namespace strokenet

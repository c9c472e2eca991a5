#pragma once

#include <cstdint>
#include <string>

#include "synprune/model.hpp"

namespace synprune {

// Binary checkpoint, little-endian, magic "SYNP" + format version, followed
// by a model header (spec name, channels, classes, variant flags) and typed
// per-parameter records (f32 tensors for parameters and running statistics,
// bitsets for connectivity masks). Throws std::runtime_error with a
// diagnostic on bad magic, unsupported version, or truncation.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace synprune

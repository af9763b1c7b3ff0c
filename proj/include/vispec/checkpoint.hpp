#pragma once
#include <filesystem>
#include <string>

#include "vispec/tensor.hpp"

namespace vispec {

// Checkpoint container: magic "VSPC", u32 version, u32 tensor count, then a
// manifest of (name, shape, byte offset) entries followed by raw f32
// little-endian payloads. Round-trips bit-exactly at f32 precision.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params);

// Loads tensors into a fresh store; every tensor is marked trainable.
ParameterStore load_checkpoint(const std::filesystem::path& path);

} // namespace vispec

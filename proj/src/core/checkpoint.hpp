#pragma once

#include <cstdint>
#include <filesystem>

#include "tensor.hpp"

namespace alignlab {

inline constexpr char kCheckpointMagic[4] = {'A', 'L', 'N', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "ALNT", u32 version, then per tensor in name order:
// u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values.
// All integers and floats little-endian.
void write_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors read_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::string& bytes);

}  // namespace alignlab

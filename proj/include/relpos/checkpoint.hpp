#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "relpos/encoder.hpp"

namespace relpos {

// Binary layout, all integers little-endian:
//   magic "RPEMBCK\0" (8 bytes), u32 format version
//   u32 entry count, then per entry: u32 key length, key bytes, u32 value length, value bytes
//   u32 block count, then per block: u32 name length, name bytes, u32 ndim,
//   ndim x u64 extents, numel x f64 (IEEE-754 bits, little-endian)
// The key/value header carries the EncoderConfig plus "seed".

constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Encoder& model, std::uint64_t seed, std::ostream& out);
void save_checkpoint(const Encoder& model, std::uint64_t seed, const std::filesystem::path& path);

struct LoadedCheckpoint {
    Encoder model;
    std::uint64_t seed;
};

LoadedCheckpoint load_checkpoint(std::istream& in);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace relpos

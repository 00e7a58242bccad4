#pragma once

#include "d3seg/volume_io.hpp"

#include <filesystem>

namespace d3seg {

// D3CK checkpoint, little-endian:
//   "D3CK" | u32 version (1) | u32 entry count |
//   per entry: u16 name length | name bytes | u32 rank | u32 extents[rank] | f64 payload
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::size_t checkpoint_file_size(const ParamStore& store);

/// Writes every parameter value in store order. Throws on non-finite values.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);

/// Reads a checkpoint without a schema.
ParamStore load_checkpoint(const std::filesystem::path& path);

/// Reads a checkpoint into an existing store, which acts as the schema: names
/// absent from the store raise UnknownParameter, missing names or differing
/// extents raise ShapeMismatch. The store is untouched on failure.
void load_checkpoint_into(ParamStore& store, const std::filesystem::path& path);

}  // namespace d3seg

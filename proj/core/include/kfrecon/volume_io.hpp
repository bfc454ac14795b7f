#pragma once

#include <filesystem>
#include <iosfwd>

#include "kfrecon/sdf_volume.hpp"

namespace kfrecon {

// Snapshot layout, little-endian: "SDFV1", voxel_size f64, truncation f64,
// block count u64, then per block (ascending coord order) 3 x int32 coord
// followed by 512 voxels of (sdf, weight, r, g, b) as f64.

void write_volume(std::ostream& out, const TwoTierStore& store);
void save_volume(const std::filesystem::path& path, const TwoTierStore& store);

/// Loaded blocks land in the host tier; `cfg` supplies the streaming
/// radius and bucket count, voxel size and truncation come from the file.
TwoTierStore read_volume(std::istream& in, VolumeConfig cfg = {});
TwoTierStore load_volume(const std::filesystem::path& path, VolumeConfig cfg = {});

}  // namespace kfrecon

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "kfrecon/geometry.hpp"
#include "kfrecon/image.hpp"
#include "kfrecon/sdf_volume.hpp"

namespace kfrecon {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<RgbD> colors;  // one per vertex, 0..255
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const { return triangles.empty(); }
  double surface_area() const;
};

/// Zero iso-surface of all observed cells in both tiers. Triangle normals
/// (counter-clockwise) point towards positive signed distance. Output
/// order follows ascending block coordinates.
TriangleMesh marching_cubes(const TwoTierStore& store);

/// Merges vertices closer than `tolerance` (grid-quantized).
TriangleMesh weld_vertices(const TriangleMesh& mesh, double tolerance = 1e-7);

/// Binary little-endian PLY: float32 xyz, uint8 rgb, int32 face lists.
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
/// Reads the layout written by write_ply().
TriangleMesh read_ply(const std::filesystem::path& path);
/// Positions and faces only.
void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

}  // namespace kfrecon

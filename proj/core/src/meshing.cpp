#include "kfrecon/meshing.hpp"

#include <cmath>
#include <unordered_map>

#include "marching_cubes_tables.hpp"

namespace kfrecon {
namespace {

constexpr int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                     {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

struct Corner {
  Vec3 position;
  const Voxel* voxel;
};

}  // namespace

double TriangleMesh::surface_area() const {
  double area = 0.0;
  for (const auto& t : triangles) {
    area += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  }
  return area;
}

TriangleMesh marching_cubes(const TwoTierStore& store) {
  const VolumeConfig& cfg = store.config();
  TriangleMesh mesh;
  for (const BlockCoord& coord : store.sorted_coords()) {
    // neighbors[dx][dy][dz] covers the +1 overhang of the last cell row.
    const VoxelBlock* neighbors[2][2][2];
    for (int dx = 0; dx < 2; ++dx)
      for (int dy = 0; dy < 2; ++dy)
        for (int dz = 0; dz < 2; ++dz)
          neighbors[dx][dy][dz] = store.find(BlockCoord{coord.x + dx, coord.y + dy, coord.z + dz});

    auto voxel_at = [&](int x, int y, int z) -> const Voxel* {
      const int bx = x / kBlockSide, by = y / kBlockSide, bz = z / kBlockSide;
      const VoxelBlock* block = neighbors[bx][by][bz];
      if (block == nullptr) return nullptr;
      return &block->voxels[VoxelBlock::index(x % kBlockSide, y % kBlockSide, z % kBlockSide)];
    };

    for (int z = 0; z < kBlockSide; ++z) {
      for (int y = 0; y < kBlockSide; ++y) {
        for (int x = 0; x < kBlockSide; ++x) {
          Corner corners[8];
          bool complete = true;
          int cube = 0;
          for (int i = 0; i < 8 && complete; ++i) {
            const int cx = x + kCornerOffset[i][0];
            const int cy = y + kCornerOffset[i][1];
            const int cz = z + kCornerOffset[i][2];
            const Voxel* v = voxel_at(cx, cy, cz);
            if (v == nullptr || !v->observed()) {
              complete = false;
              break;
            }
            corners[i] = {voxel_center(coord, cx, cy, cz, cfg), v};
            if (v->sdf < 0.0) cube |= 1 << i;
          }
          if (!complete) continue;
          const std::uint16_t edges = detail::kEdgeTable[cube];
          if (edges == 0) continue;

          std::uint32_t edge_vertex[12];
          for (int e = 0; e < 12; ++e) {
            if (!(edges & (1 << e))) continue;
            const Corner& a = corners[kEdgeCorners[e][0]];
            const Corner& b = corners[kEdgeCorners[e][1]];
            const double da = a.voxel->sdf;
            const double db = b.voxel->sdf;
            const double t = da == db ? 0.5 : da / (da - db);
            edge_vertex[e] = static_cast<std::uint32_t>(mesh.vertices.size());
            mesh.vertices.push_back(a.position + t * (b.position - a.position));
            RgbD c{};
            for (int ch = 0; ch < 3; ++ch) {
              c[ch] = a.voxel->color[ch] + t * (b.voxel->color[ch] - a.voxel->color[ch]);
            }
            mesh.colors.push_back(c);
          }
          const auto& tri = detail::kTriTable[cube];
          for (int i = 0; tri[i] != -1; i += 3) {
            // Table order winds clockwise seen from outside; swap for CCW.
            mesh.triangles.push_back(
                {edge_vertex[tri[i]], edge_vertex[tri[i + 2]], edge_vertex[tri[i + 1]]});
          }
        }
      }
    }
  }
  return mesh;
}

TriangleMesh weld_vertices(const TriangleMesh& mesh, double tolerance) {
  struct KeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
      return static_cast<std::size_t>((k[0] * 73856093LL) ^ (k[1] * 19349669LL) ^ (k[2] * 83492791LL));
    }
  };
  std::unordered_map<std::array<std::int64_t, 3>, std::uint32_t, KeyHash> index;
  TriangleMesh out;
  std::vector<std::uint32_t> remap(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& p = mesh.vertices[i];
    const std::array<std::int64_t, 3> key{std::llround(p.x() / tolerance), std::llround(p.y() / tolerance),
                                          std::llround(p.z() / tolerance)};
    auto [it, inserted] = index.try_emplace(key, static_cast<std::uint32_t>(out.vertices.size()));
    if (inserted) {
      out.vertices.push_back(p);
      out.colors.push_back(mesh.colors.empty() ? RgbD{} : mesh.colors[i]);
    }
    remap[i] = it->second;
  }
  for (const auto& t : mesh.triangles) {
    const std::array<std::uint32_t, 3> r{remap[t[0]], remap[t[1]], remap[t[2]]};
    if (r[0] == r[1] || r[1] == r[2] || r[0] == r[2]) continue;
    out.triangles.push_back(r);
  }
  return out;
}

}  // namespace kfrecon

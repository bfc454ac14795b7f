#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "kfrecon/geometry.hpp"
#include "kfrecon/keyframe_fusion.hpp"
#include "kfrecon/meshing.hpp"
#include "kfrecon/sdf_volume.hpp"

namespace kfrecon {

using PointCloud = std::vector<Vec3>;

/// Area-weighted uniform samples on the mesh surface. Throws
/// kDegenerateMesh when the total area is zero.
PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

/// Exact nearest neighbor over a uniform grid with ring search.
class NearestNeighborGrid {
 public:
  NearestNeighborGrid(std::span<const Vec3> points, double cell_size);

  struct Match {
    std::size_t index = 0;
    double squared_distance = 0.0;
  };
  Match nearest(const Vec3& query) const;

  std::size_t size() const { return points_.size(); }

 private:
  using Cell = Eigen::Vector3i;
  Cell cell_of(const Vec3& p) const;
  std::size_t flat(const Cell& c) const;

  std::vector<Vec3> points_;  // sorted by cell
  std::vector<std::uint32_t> original_index_;
  std::vector<std::uint32_t> cell_start_;  // size cells + 1
  double cell_size_;
  Vec3 origin_;
  Cell dims_;
};

/// Euclidean distance from each query to its nearest target.
std::vector<double> nearest_distances(std::span<const Vec3> queries,
                                      std::span<const Vec3> targets, double cell_size);

inline constexpr double kDefaultGridCell = 0.04;  // 4 x default voxel size

/// Mean distance (mm) from model vertices to the nearest reference point.
double mad_correctness(const TriangleMesh& model, const PointCloud& reference,
                       double cell_size = kDefaultGridCell);

/// Mean distance (mm) from reference points to the nearest model vertex.
/// Throws kIncompleteModel for an empty model.
double mad_completeness(const TriangleMesh& model, const PointCloud& reference,
                        double cell_size = kDefaultGridCell);

/// Blue (0 mm) to red (>= max_mm) ramp.
Rgb8 distance_color(double distance_mm, double max_mm = 50.0);

/// Mesh with vertices colored by their per-vertex distance in mm.
void write_distance_ply(const std::filesystem::path& path, const TriangleMesh& mesh,
                        std::span<const double> distances_mm);

/// Fuses every frame at its ground-truth pose (one frame per keyframe) into
/// a fresh volume and extracts the mesh.
TriangleMesh build_reference(std::span<const FrameObservation> frames,
                             const std::map<int, Pose>& ground_truth,
                             const Intrinsics& k, const VolumeConfig& cfg,
                             const FusionParams& fusion = {});

}  // namespace kfrecon

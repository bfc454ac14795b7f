#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "kfrecon/geometry.hpp"
#include "kfrecon/image.hpp"
#include "kfrecon/keyframe_fusion.hpp"

namespace kfrecon {

inline constexpr int kBlockSide = 8;
inline constexpr int kVoxelsPerBlock = kBlockSide * kBlockSide * kBlockSide;

struct VolumeConfig {
  double voxel_size = 0.01;   // meters
  double truncation = 0.06;   // mu, meters
  double stream_radius = 3.0; // meters
  std::size_t hash_buckets = std::size_t{1} << 16;

  void validate() const;
  double block_size() const { return kBlockSide * voxel_size; }
  /// Largest camera-to-sample distance whose truncation band stays inside
  /// the streaming sphere.
  double safe_range() const {
    return stream_radius - truncation - 1.7320508075688772 * block_size();
  }
};

struct BlockCoord {
  int x = 0;
  int y = 0;
  int z = 0;
  auto operator<=>(const BlockCoord&) const = default;
};

struct Voxel {
  double sdf = 0.0;
  double weight = 0.0;
  RgbD color{0.0, 0.0, 0.0};

  bool observed() const { return weight > 0.0; }
  void reset() { *this = Voxel{}; }
};

struct VoxelBlock {
  BlockCoord coord;
  std::array<Voxel, kVoxelsPerBlock> voxels{};

  /// x runs fastest, then y, then z.
  static constexpr int index(int x, int y, int z) {
    return x + kBlockSide * (y + kBlockSide * z);
  }
  bool all_unobserved() const;
};

Vec3 block_center(const BlockCoord& c, const VolumeConfig& cfg);
BlockCoord block_of(const Vec3& world, const VolumeConfig& cfg);
/// World position of voxel (x, y, z) of block c.
Vec3 voxel_center(const BlockCoord& c, int x, int y, int z, const VolumeConfig& cfg);

/// XOR of prime-multiplied coordinates, reduced modulo `buckets`.
std::size_t block_hash(const BlockCoord& c, std::size_t buckets);

/// Fixed bucket count, separate chaining.
class BlockHashMap {
 public:
  explicit BlockHashMap(std::size_t buckets);

  VoxelBlock* find(const BlockCoord& c);
  const VoxelBlock* find(const BlockCoord& c) const;
  bool contains(const BlockCoord& c) const { return find(c) != nullptr; }

  /// Inserts; the coordinate must not be present yet.
  VoxelBlock* insert(std::unique_ptr<VoxelBlock> block);
  std::unique_ptr<VoxelBlock> extract(const BlockCoord& c);

  std::size_t size() const { return size_; }
  std::size_t bucket_count() const { return buckets_.size(); }
  std::size_t max_bucket_load() const;

  template <typename F>
  void for_each(F&& f) const {
    for (const auto& bucket : buckets_)
      for (const auto& block : bucket) f(*block);
  }
  std::vector<BlockCoord> coords() const;

 private:
  std::vector<std::vector<std::unique_ptr<VoxelBlock>>> buckets_;
  std::size_t size_ = 0;
};

struct StreamCounters {
  std::uint64_t blocks_streamed_in = 0;
  std::uint64_t blocks_streamed_out = 0;
  std::uint64_t sphere_relocations = 0;

  StreamCounters& operator+=(const StreamCounters& o);
  friend StreamCounters operator-(StreamCounters a, const StreamCounters& b);
  bool operator==(const StreamCounters&) const = default;
};

/// Sparse voxel-block volume split into an active tier (blocks inside the
/// streaming sphere) and a host tier (everything else). Both tiers hold
/// full blocks; moving between them only updates the counters.
class TwoTierStore {
 public:
  explicit TwoTierStore(const VolumeConfig& cfg);

  const VolumeConfig& config() const { return cfg_; }

  VoxelBlock* find_active(const BlockCoord& c) { return active_.find(c); }
  /// Looks in both tiers.
  const VoxelBlock* find(const BlockCoord& c) const;
  bool in_host(const BlockCoord& c) const { return host_.count(c) != 0; }

  std::size_t active_count() const { return active_.size(); }
  std::size_t host_count() const { return host_.size(); }
  std::size_t block_count() const { return active_.size() + host_.size(); }

  /// All block coordinates of both tiers in ascending order.
  std::vector<BlockCoord> sorted_coords() const;

  const StreamCounters& counters() const { return counters_; }
  const std::optional<Vec3>& stream_center() const { return center_; }
  bool inside_sphere(const BlockCoord& c) const;

  /// Re-centers the sphere and moves blocks between tiers.
  StreamCounters stream(const Vec3& center);

  /// Creates an empty block in the active tier. Throws kStreamingContract if
  /// the block lies outside the sphere or sits in the host tier.
  VoxelBlock* allocate(const BlockCoord& c);

  /// Drops blocks in either tier whose voxels are all unobserved.
  std::size_t garbage_collect();

  /// Used by deserialization: places a block directly in the host tier.
  void insert_host(std::unique_ptr<VoxelBlock> block);

 private:
  VolumeConfig cfg_;
  BlockHashMap active_;
  std::map<BlockCoord, std::unique_ptr<VoxelBlock>> host_;
  StreamCounters counters_;
  std::optional<Vec3> center_;
};

/// Blocks touched by the truncation band of every valid keyframe ray, in
/// ascending order. Depends only on (kf, pose, k, cfg).
std::vector<BlockCoord> keyframe_footprint(const Keyframe& kf, const Pose& pose,
                                           const Intrinsics& k,
                                           const VolumeConfig& cfg);

/// Allocates missing footprint blocks; returns the newly created ones.
std::vector<BlockCoord> allocate_blocks(TwoTierStore& store, const Keyframe& kf,
                                        const Pose& pose, const Intrinsics& k);

struct IntegrationRecord {
  int keyframe_id = 0;
  Pose pose;
  std::size_t blocks = 0;
  std::size_t voxels_updated = 0;
};

/// Running weighted average of the keyframe's projective distances into the
/// footprint voxels. Allocates blocks first.
IntegrationRecord integrate(TwoTierStore& store, const Keyframe& kf,
                            const Pose& pose, const Intrinsics& k);

/// Exact inverse of integrate() for the same (kf, pose). Validates every
/// voxel before touching any; throws kInconsistentDeintegration on
/// mismatch and leaves the volume unchanged.
void deintegrate(TwoTierStore& store, const Keyframe& kf, const Pose& pose,
                 const Intrinsics& k);

/// Weight below which a voxel counts as unobserved after de-integration.
inline constexpr double kZeroWeightEpsilon = 1e-9;

}  // namespace kfrecon

#include "kfrecon/sdf_volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "kfrecon/error.hpp"

namespace kfrecon {
namespace {

struct VoxelSample {
  double sdf;
  double weight;
  RgbD color;
};

// Projective sample of one voxel center; nullopt outside the strict band.
inline std::optional<VoxelSample> sample_voxel(const Vec3& world, const Pose& world_to_camera,
                                               const Keyframe& kf, const Intrinsics& k,
                                               double mu) {
  const Vec3 p = world_to_camera * world;
  if (!(p.z() > 0.0)) return std::nullopt;
  const int u = static_cast<int>(std::lround(k.cx + k.fx * p.x() / p.z()));
  const int v = static_cast<int>(std::lround(k.cy + k.fy * p.y() / p.z()));
  if (!kf.depth.in_bounds(u, v)) return std::nullopt;
  const double w = kf.weight(u, v);
  if (w <= 0.0) return std::nullopt;
  const double d = kf.depth(u, v) - p.z();
  if (d < -mu || d > mu) return std::nullopt;
  return VoxelSample{d, w, kf.color(u, v)};
}

// Amanatides-Woo walk over the block grid along segment a -> b.
template <typename F>
void traverse_blocks(const Vec3& a, const Vec3& b, double block_size, F&& visit) {
  const Vec3 start = a / block_size;
  const Vec3 end = b / block_size;
  const Vec3 dir = end - start;
  Eigen::Vector3i cell(static_cast<int>(std::floor(start.x())), static_cast<int>(std::floor(start.y())),
                       static_cast<int>(std::floor(start.z())));
  const Eigen::Vector3i last(static_cast<int>(std::floor(end.x())), static_cast<int>(std::floor(end.y())),
                             static_cast<int>(std::floor(end.z())));
  Eigen::Vector3i step;
  Vec3 t_max;
  Vec3 t_delta;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (dir[i] > 0.0) {
      step[i] = 1;
      t_delta[i] = 1.0 / dir[i];
      t_max[i] = (cell[i] + 1.0 - start[i]) / dir[i];
    } else if (dir[i] < 0.0) {
      step[i] = -1;
      t_delta[i] = -1.0 / dir[i];
      t_max[i] = (cell[i] - start[i]) / dir[i];
    } else {
      step[i] = 0;
      t_delta[i] = kInf;
      t_max[i] = kInf;
    }
  }
  visit(BlockCoord{cell.x(), cell.y(), cell.z()});
  // Bounded by the number of cell boundaries the segment can cross.
  const int max_steps = (last - cell).cwiseAbs().sum() + 3;
  for (int n = 0; n < max_steps && cell != last; ++n) {
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    if (t_max[axis] > 1.0) break;
    cell[axis] += step[axis];
    t_max[axis] += t_delta[axis];
    visit(BlockCoord{cell.x(), cell.y(), cell.z()});
  }
}

}  // namespace

void VolumeConfig::validate() const {
  if (!(voxel_size > 0.0)) throw Error(ErrorCode::kInvalidArgument, "voxel_size must be positive");
  if (!(truncation >= 2.0 * voxel_size)) {
    throw Error(ErrorCode::kInvalidArgument, "truncation must be at least two voxels");
  }
  if (!(stream_radius > truncation)) {
    throw Error(ErrorCode::kInvalidArgument, "stream_radius must exceed the truncation");
  }
  if (hash_buckets == 0) throw Error(ErrorCode::kInvalidArgument, "hash_buckets must be positive");
}

bool VoxelBlock::all_unobserved() const {
  return std::none_of(voxels.begin(), voxels.end(), [](const Voxel& v) { return v.observed(); });
}

Vec3 block_center(const BlockCoord& c, const VolumeConfig& cfg) {
  const double bs = cfg.block_size();
  return Vec3((c.x + 0.5) * bs, (c.y + 0.5) * bs, (c.z + 0.5) * bs);
}

BlockCoord block_of(const Vec3& world, const VolumeConfig& cfg) {
  const double bs = cfg.block_size();
  return BlockCoord{static_cast<int>(std::floor(world.x() / bs)),
                    static_cast<int>(std::floor(world.y() / bs)),
                    static_cast<int>(std::floor(world.z() / bs))};
}

Vec3 voxel_center(const BlockCoord& c, int x, int y, int z, const VolumeConfig& cfg) {
  const double vs = cfg.voxel_size;
  return Vec3((c.x * kBlockSide + x + 0.5) * vs, (c.y * kBlockSide + y + 0.5) * vs,
              (c.z * kBlockSide + z + 0.5) * vs);
}

StreamCounters& StreamCounters::operator+=(const StreamCounters& o) {
  blocks_streamed_in += o.blocks_streamed_in;
  blocks_streamed_out += o.blocks_streamed_out;
  sphere_relocations += o.sphere_relocations;
  return *this;
}

StreamCounters operator-(StreamCounters a, const StreamCounters& b) {
  a.blocks_streamed_in -= b.blocks_streamed_in;
  a.blocks_streamed_out -= b.blocks_streamed_out;
  a.sphere_relocations -= b.sphere_relocations;
  return a;
}

TwoTierStore::TwoTierStore(const VolumeConfig& cfg) : cfg_(cfg), active_(cfg.hash_buckets) {
  cfg_.validate();
}

const VoxelBlock* TwoTierStore::find(const BlockCoord& c) const {
  if (const VoxelBlock* b = active_.find(c)) return b;
  auto it = host_.find(c);
  return it == host_.end() ? nullptr : it->second.get();
}

std::vector<BlockCoord> TwoTierStore::sorted_coords() const {
  std::vector<BlockCoord> out = active_.coords();
  out.reserve(block_count());
  for (const auto& [c, _] : host_) out.push_back(c);
  std::sort(out.begin(), out.end());
  return out;
}

bool TwoTierStore::inside_sphere(const BlockCoord& c) const {
  return center_ && (block_center(c, cfg_) - *center_).norm() <= cfg_.stream_radius;
}

StreamCounters TwoTierStore::stream(const Vec3& center) {
  StreamCounters delta;
  if (center_ && (center - *center_).norm() > cfg_.block_size()) delta.sphere_relocations = 1;
  center_ = center;

  for (const BlockCoord& c : active_.coords()) {
    if (!inside_sphere(c)) {
      host_.emplace(c, active_.extract(c));
      ++delta.blocks_streamed_out;
    }
  }
  for (auto it = host_.begin(); it != host_.end();) {
    if (inside_sphere(it->first)) {
      active_.insert(std::move(it->second));
      it = host_.erase(it);
      ++delta.blocks_streamed_in;
    } else {
      ++it;
    }
  }
  counters_ += delta;
  return delta;
}

VoxelBlock* TwoTierStore::allocate(const BlockCoord& c) {
  if (VoxelBlock* existing = active_.find(c)) return existing;
  if (!inside_sphere(c) || host_.count(c) != 0) {
    std::ostringstream msg;
    msg << "block (" << c.x << ", " << c.y << ", " << c.z << ") is outside the active sphere";
    throw Error(ErrorCode::kStreamingContract, msg.str());
  }
  auto block = std::make_unique<VoxelBlock>();
  block->coord = c;
  return active_.insert(std::move(block));
}

std::size_t TwoTierStore::garbage_collect() {
  std::size_t freed = 0;
  for (const BlockCoord& c : active_.coords()) {
    if (active_.find(c)->all_unobserved()) {
      active_.extract(c);
      ++freed;
    }
  }
  for (auto it = host_.begin(); it != host_.end();) {
    if (it->second->all_unobserved()) {
      it = host_.erase(it);
      ++freed;
    } else {
      ++it;
    }
  }
  return freed;
}

void TwoTierStore::insert_host(std::unique_ptr<VoxelBlock> block) {
  const BlockCoord c = block->coord;
  if (find(c) != nullptr) throw Error(ErrorCode::kFormat, "duplicate block in volume snapshot");
  host_.emplace(c, std::move(block));
}

std::vector<BlockCoord> keyframe_footprint(const Keyframe& kf, const Pose& pose,
                                           const Intrinsics& k, const VolumeConfig& cfg) {
  std::vector<BlockCoord> blocks;
  const double mu = cfg.truncation;
  const double bs = cfg.block_size();
  for (int y = 0; y < kf.depth.height(); ++y) {
    for (int x = 0; x < kf.depth.width(); ++x) {
      if (kf.weight(x, y) <= 0.0) continue;
      const double z = kf.depth(x, y);
      const double near = std::max(z - mu, 1e-6);
      const Vec3 a = pose * unproject_unchecked(x, y, near, k);
      const Vec3 b = pose * unproject_unchecked(x, y, z + mu, k);
      traverse_blocks(a, b, bs, [&](const BlockCoord& c) { blocks.push_back(c); });
    }
  }
  std::sort(blocks.begin(), blocks.end());
  blocks.erase(std::unique(blocks.begin(), blocks.end()), blocks.end());
  return blocks;
}

std::vector<BlockCoord> allocate_blocks(TwoTierStore& store, const Keyframe& kf, const Pose& pose,
                                        const Intrinsics& k) {
  std::vector<BlockCoord> created;
  for (const BlockCoord& c : keyframe_footprint(kf, pose, k, store.config())) {
    if (store.find_active(c) != nullptr) continue;
    store.allocate(c);
    created.push_back(c);
  }
  return created;
}

IntegrationRecord integrate(TwoTierStore& store, const Keyframe& kf, const Pose& pose,
                            const Intrinsics& k) {
  const VolumeConfig& cfg = store.config();
  const std::vector<BlockCoord> footprint = keyframe_footprint(kf, pose, k, cfg);
  std::vector<VoxelBlock*> blocks;
  blocks.reserve(footprint.size());
  for (const BlockCoord& c : footprint) blocks.push_back(store.allocate(c));

  const Pose world_to_camera = pose.inverse();
  IntegrationRecord record{kf.id, pose, blocks.size(), 0};
  for (VoxelBlock* block : blocks) {
    for (int z = 0; z < kBlockSide; ++z) {
      for (int y = 0; y < kBlockSide; ++y) {
        for (int x = 0; x < kBlockSide; ++x) {
          const auto s = sample_voxel(voxel_center(block->coord, x, y, z, cfg), world_to_camera,
                                      kf, k, cfg.truncation);
          if (!s) continue;
          Voxel& v = block->voxels[VoxelBlock::index(x, y, z)];
          const double w_new = v.weight + s->weight;
          v.sdf = (v.sdf * v.weight + s->sdf * s->weight) / w_new;
          for (int ch = 0; ch < 3; ++ch) {
            v.color[ch] = (v.color[ch] * v.weight + s->color[ch] * s->weight) / w_new;
          }
          v.weight = w_new;
          ++record.voxels_updated;
        }
      }
    }
  }
  return record;
}

void deintegrate(TwoTierStore& store, const Keyframe& kf, const Pose& pose, const Intrinsics& k) {
  const VolumeConfig& cfg = store.config();
  const std::vector<BlockCoord> footprint = keyframe_footprint(kf, pose, k, cfg);
  const Pose world_to_camera = pose.inverse();

  std::vector<VoxelBlock*> blocks;
  blocks.reserve(footprint.size());
  for (const BlockCoord& c : footprint) {
    VoxelBlock* block = store.find_active(c);
    if (block == nullptr) {
      if (store.in_host(c)) {
        throw Error(ErrorCode::kStreamingContract,
                    "de-integration touches a block outside the active sphere");
      }
      // Never allocated: fine as long as no voxel of it would be touched.
    }
    blocks.push_back(block);
  }

  auto for_each_sample = [&](auto&& f) {
    for (std::size_t i = 0; i < footprint.size(); ++i) {
      for (int z = 0; z < kBlockSide; ++z) {
        for (int y = 0; y < kBlockSide; ++y) {
          for (int x = 0; x < kBlockSide; ++x) {
            const auto s = sample_voxel(voxel_center(footprint[i], x, y, z, cfg), world_to_camera,
                                        kf, k, cfg.truncation);
            if (s) f(blocks[i], VoxelBlock::index(x, y, z), *s);
          }
        }
      }
    }
  };

  for_each_sample([&](VoxelBlock* block, int idx, const VoxelSample& s) {
    const double remaining = block ? block->voxels[idx].weight - s.weight : -s.weight;
    if (remaining < -kZeroWeightEpsilon) {
      throw Error(ErrorCode::kInconsistentDeintegration,
                  "de-integration removes more weight than the voxel holds");
    }
  });

  for_each_sample([&](VoxelBlock* block, int idx, const VoxelSample& s) {
    Voxel& v = block->voxels[idx];
    const double w_new = v.weight - s.weight;
    if (w_new < kZeroWeightEpsilon) {
      v.reset();
      return;
    }
    v.sdf = std::clamp((v.sdf * v.weight - s.sdf * s.weight) / w_new, -cfg.truncation,
                       cfg.truncation);
    for (int ch = 0; ch < 3; ++ch) {
      v.color[ch] = (v.color[ch] * v.weight - s.color[ch] * s.weight) / w_new;
    }
    v.weight = w_new;
  });
}

}  // namespace kfrecon

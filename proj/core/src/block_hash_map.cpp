#include <algorithm>

#include "kfrecon/error.hpp"
#include "kfrecon/sdf_volume.hpp"

namespace kfrecon {

std::size_t block_hash(const BlockCoord& c, std::size_t buckets) {
  const auto ux = static_cast<std::uint64_t>(static_cast<std::int64_t>(c.x));
  const auto uy = static_cast<std::uint64_t>(static_cast<std::int64_t>(c.y));
  const auto uz = static_cast<std::uint64_t>(static_cast<std::int64_t>(c.z));
  const std::uint64_t h = (ux * 73856093ULL) ^ (uy * 19349669ULL) ^ (uz * 83492791ULL);
  return static_cast<std::size_t>(h % buckets);
}

BlockHashMap::BlockHashMap(std::size_t buckets) {
  if (buckets == 0) throw Error(ErrorCode::kInvalidArgument, "hash needs at least one bucket");
  buckets_.resize(buckets);
}

VoxelBlock* BlockHashMap::find(const BlockCoord& c) {
  for (auto& block : buckets_[block_hash(c, buckets_.size())]) {
    if (block->coord == c) return block.get();
  }
  return nullptr;
}

const VoxelBlock* BlockHashMap::find(const BlockCoord& c) const {
  for (const auto& block : buckets_[block_hash(c, buckets_.size())]) {
    if (block->coord == c) return block.get();
  }
  return nullptr;
}

VoxelBlock* BlockHashMap::insert(std::unique_ptr<VoxelBlock> block) {
  auto& bucket = buckets_[block_hash(block->coord, buckets_.size())];
  for (const auto& existing : bucket) {
    if (existing->coord == block->coord) {
      throw Error(ErrorCode::kInvalidArgument, "block inserted twice");
    }
  }
  bucket.push_back(std::move(block));
  ++size_;
  return bucket.back().get();
}

std::unique_ptr<VoxelBlock> BlockHashMap::extract(const BlockCoord& c) {
  auto& bucket = buckets_[block_hash(c, buckets_.size())];
  auto it = std::find_if(bucket.begin(), bucket.end(),
                         [&](const auto& block) { return block->coord == c; });
  if (it == bucket.end()) return nullptr;
  std::unique_ptr<VoxelBlock> out = std::move(*it);
  bucket.erase(it);
  --size_;
  return out;
}

std::size_t BlockHashMap::max_bucket_load() const {
  std::size_t load = 0;
  for (const auto& bucket : buckets_) load = std::max(load, bucket.size());
  return load;
}

std::vector<BlockCoord> BlockHashMap::coords() const {
  std::vector<BlockCoord> out;
  out.reserve(size_);
  for_each([&](const VoxelBlock& b) { out.push_back(b.coord); });
  return out;
}

}  // namespace kfrecon

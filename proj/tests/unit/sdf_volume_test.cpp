#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "kfrecon/error.hpp"
#include "kfrecon/sdf_volume.hpp"
#include "kfrecon/volume_io.hpp"
#include "test_support.hpp"

namespace kfrecon {
namespace {

using testing::Gen;
using testing::small_camera;

VolumeConfig small_config() {
  VolumeConfig cfg;
  cfg.voxel_size = 0.02;
  cfg.truncation = 0.08;
  cfg.stream_radius = 4.0;
  cfg.hash_buckets = 1 << 12;
  return cfg;
}

// Keyframe with unit weights everywhere and the given depth map.
Keyframe manual_keyframe(int id, const DepthMap& depth, const Intrinsics& k,
                         RgbD color = {100.0, 150.0, 200.0}) {
  Keyframe kf = Keyframe::open(id, k, Pose::identity(), 0, Pose::identity());
  kf.depth = depth;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    kf.weight.data()[i] = depth.data()[i] > 0.0 ? 1.0 : 0.0;
    kf.color.data()[i] = color;
    kf.has_color.data()[i] = 1;
  }
  kf.members = {id + 1};
  kf.color_finalized = true;
  return kf;
}

// Random wall-ish keyframe with fused weights, like the pipeline produces.
Keyframe random_keyframe(Gen& gen, int id, const Intrinsics& k) {
  const Vec3 n = Vec3(gen.uniform(-0.3, 0.3), gen.uniform(-0.3, 0.3), -1.0).normalized();
  DepthMap depth = testing::plane_depth(k, n, -gen.uniform(1.0, 2.5));
  for (double& z : depth.data()) {
    if (gen.coin(0.05)) z = 0.0;
  }
  ColorImage color(k.width, k.height);
  for (auto& c : color.data()) {
    c = Rgb8{static_cast<std::uint8_t>(gen.integer(0, 255)), static_cast<std::uint8_t>(gen.integer(0, 255)),
             static_cast<std::uint8_t>(gen.integer(0, 255))};
  }
  return testing::single_frame_keyframe(id, depth, color, Pose::identity(), k);
}

struct VoxelRef {
  BlockCoord block;
  int index;
};

// Sum over all observed voxels; used for weight conservation checks.
double total_weight(const TwoTierStore& store) {
  double sum = 0.0;
  for (const BlockCoord& c : store.sorted_coords()) {
    for (const Voxel& v : store.find(c)->voxels) sum += v.weight;
  }
  return sum;
}

struct Diff {
  double sdf = 0.0;
  double weight = 0.0;
  double color = 0.0;
  bool observed_mismatch = false;
};

Diff diff_volumes(const TwoTierStore& a, const TwoTierStore& b) {
  std::set<BlockCoord> coords;
  for (const auto& c : a.sorted_coords()) coords.insert(c);
  for (const auto& c : b.sorted_coords()) coords.insert(c);
  const VoxelBlock empty{};
  Diff d;
  for (const auto& c : coords) {
    const VoxelBlock& ba = a.find(c) ? *a.find(c) : empty;
    const VoxelBlock& bb = b.find(c) ? *b.find(c) : empty;
    for (int i = 0; i < kVoxelsPerBlock; ++i) {
      const Voxel& x = ba.voxels[i];
      const Voxel& y = bb.voxels[i];
      if (x.observed() != y.observed()) d.observed_mismatch = true;
      d.weight = std::max(d.weight, std::abs(x.weight - y.weight));
      if (!x.observed() || !y.observed()) continue;
      d.sdf = std::max(d.sdf, std::abs(x.sdf - y.sdf));
      for (int ch = 0; ch < 3; ++ch) d.color = std::max(d.color, std::abs(x.color[ch] - y.color[ch]));
    }
  }
  return d;
}

TEST(BlockHash, DeterministicAndOriginFixed) {
  const BlockCoord c{3, -7, 11};
  EXPECT_EQ(block_hash(c, 4096), block_hash(c, 4096));
  EXPECT_EQ(block_hash(BlockCoord{0, 0, 0}, 4096), 0u);
  EXPECT_LT(block_hash(BlockCoord{-5, 9, -2}, 17), 17u);
}

TEST(BlockHash, SpreadsRandomCoordinates) {
  Gen gen(1);
  constexpr std::size_t kBuckets = 1 << 16;
  constexpr int kCount = 100000;
  std::vector<int> load(kBuckets, 0);
  for (int i = 0; i < kCount; ++i) {
    const BlockCoord c{gen.integer(-500, 500), gen.integer(-500, 500), gen.integer(-500, 500)};
    ++load[block_hash(c, kBuckets)];
  }
  const double mean = static_cast<double>(kCount) / kBuckets;
  EXPECT_LT(*std::max_element(load.begin(), load.end()), 10.0 * mean);
}

TEST(BlockHashMap, InsertFindExtract) {
  BlockHashMap map(8);
  for (int i = 0; i < 40; ++i) {
    auto b = std::make_unique<VoxelBlock>();
    b->coord = BlockCoord{i, -i, 2 * i};
    map.insert(std::move(b));
  }
  EXPECT_EQ(map.size(), 40u);
  EXPECT_TRUE(map.contains(BlockCoord{7, -7, 14}));
  EXPECT_FALSE(map.contains(BlockCoord{7, 7, 14}));
  auto out = map.extract(BlockCoord{7, -7, 14});
  ASSERT_TRUE(out);
  EXPECT_EQ(out->coord, (BlockCoord{7, -7, 14}));
  EXPECT_EQ(map.size(), 39u);
  EXPECT_FALSE(map.extract(BlockCoord{7, -7, 14}));
  auto dup = std::make_unique<VoxelBlock>();
  dup->coord = BlockCoord{1, -1, 2};
  EXPECT_THROW(map.insert(std::move(dup)), Error);
  EXPECT_EQ(map.coords().size(), 39u);
}

TEST(VolumeConfig, Validation) {
  VolumeConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  VolumeConfig bad = cfg;
  bad.truncation = 1.5 * cfg.voxel_size;
  EXPECT_THROW(bad.validate(), Error);
  bad = cfg;
  bad.stream_radius = cfg.truncation;
  EXPECT_THROW(bad.validate(), Error);
  bad = cfg;
  bad.voxel_size = 0.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Geometry, BlockAndVoxelCoordinates) {
  const VolumeConfig cfg = small_config();
  EXPECT_EQ(block_of(Vec3(0.01, -0.01, 0.17), cfg), (BlockCoord{0, -1, 1}));
  const Vec3 c = voxel_center(BlockCoord{1, 0, -1}, 0, 7, 3, cfg);
  EXPECT_TRUE(c.isApprox(Vec3(8.5 * 0.02, 7.5 * 0.02, -4.5 * 0.02)));
  EXPECT_EQ(block_of(c, cfg), (BlockCoord{1, 0, -1}));
}

TEST(Allocation, EmptyKeyframeAllocatesNothing) {
  const Intrinsics k = small_camera();
  TwoTierStore store(small_config());
  store.stream(Vec3::Zero());
  const Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  EXPECT_TRUE(allocate_blocks(store, kf, Pose::identity(), k).empty());
}

TEST(Allocation, SingleRayCoversTruncationBand) {
  const Intrinsics k = small_camera();
  VolumeConfig cfg = small_config();
  cfg.voxel_size = 0.01;
  TwoTierStore store(cfg);
  store.stream(Vec3::Zero());
  DepthMap depth(k.width, k.height, 0.0);
  const int u = 40, v = 13;
  depth(u, v) = 2.0;
  const Keyframe kf = manual_keyframe(0, depth, k);
  const auto created = allocate_blocks(store, kf, Pose::identity(), k);
  const std::set<BlockCoord> got(created.begin(), created.end());

  // Dense sampling oracle along z in [1.92, 2.08].
  std::set<BlockCoord> sampled;
  for (int i = 0; i <= 16000; ++i) {
    const double z = 1.92 + 0.16 * i / 16000.0;
    sampled.insert(block_of(unproject_unchecked(u, v, z, k), cfg));
  }
  for (const auto& c : sampled) EXPECT_TRUE(got.count(c)) << c.x << " " << c.y << " " << c.z;
  // Every allocated block must be crossed by the segment (slab test).
  const Vec3 a = unproject_unchecked(u, v, 1.92, k);
  const Vec3 b = unproject_unchecked(u, v, 2.08, k);
  for (const auto& c : got) {
    double t0 = 0.0, t1 = 1.0;
    for (int ax = 0; ax < 3; ++ax) {
      const double lo = (ax == 0 ? c.x : ax == 1 ? c.y : c.z) * cfg.block_size();
      const double hi = lo + cfg.block_size();
      const double d = b[ax] - a[ax];
      if (std::abs(d) < 1e-15) {
        EXPECT_TRUE(a[ax] >= lo - 1e-12 && a[ax] <= hi + 1e-12);
        continue;
      }
      double ta = (lo - a[ax]) / d, tb = (hi - a[ax]) / d;
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    EXPECT_LE(t0, t1 + 1e-9);
  }
  EXPECT_TRUE(allocate_blocks(store, kf, Pose::identity(), k).empty());
}

TEST(Allocation, OutsideSphereViolatesStreamingContract) {
  VolumeConfig cfg = small_config();
  cfg.stream_radius = 0.5;
  TwoTierStore store(cfg);
  EXPECT_THROW(store.allocate(BlockCoord{0, 0, 0}), Error);  // no sphere yet
  store.stream(Vec3::Zero());
  EXPECT_NO_THROW(store.allocate(BlockCoord{0, 0, 0}));
  try {
    store.allocate(BlockCoord{0, 0, 40});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kStreamingContract);
  }
  const Intrinsics k = small_camera();
  const Keyframe far = manual_keyframe(0, testing::flat_depth(k, 2.0), k);
  EXPECT_THROW(integrate(store, far, Pose::identity(), k), Error);
}

TEST(Integrate, RunningAverageExamples) {
  const Intrinsics k = small_camera(16, 12);
  VolumeConfig cfg = small_config();
  cfg.voxel_size = 0.01;
  cfg.truncation = 0.06;
  TwoTierStore store(cfg);
  store.stream(Vec3::Zero());
  // Voxel (0,0,7) of block (0,0,24) has its center at z = 1.995.
  const BlockCoord block{0, 0, 24};
  const int idx = VoxelBlock::index(0, 0, 7);
  ASSERT_NEAR(voxel_center(block, 0, 0, 7, cfg).z(), 1.995, 1e-12);

  integrate(store, manual_keyframe(0, testing::flat_depth(k, 2.005), k, {128, 128, 128}),
            Pose::identity(), k);
  const Voxel& v = store.find(block)->voxels[idx];
  EXPECT_NEAR(v.sdf, 0.01, 1e-12);
  EXPECT_EQ(v.weight, 1.0);
  EXPECT_NEAR(v.color[0], 128.0, 1e-12);

  integrate(store, manual_keyframe(1, testing::flat_depth(k, 2.025), k, {0, 64, 255}),
            Pose::identity(), k);
  EXPECT_NEAR(v.sdf, 0.02, 1e-12);
  EXPECT_EQ(v.weight, 2.0);
  EXPECT_NEAR(v.color[0], 64.0, 1e-12);
  EXPECT_NEAR(v.color[2], 191.5, 1e-12);
}

TEST(Integrate, StrictTruncationBand) {
  const Intrinsics k = small_camera(16, 12);
  VolumeConfig cfg = small_config();
  cfg.voxel_size = 0.01;
  cfg.truncation = 0.06;
  TwoTierStore store(cfg);
  store.stream(Vec3::Zero());
  integrate(store, manual_keyframe(0, testing::flat_depth(k, 2.0), k), Pose::identity(), k);
  double max_abs = 0.0;
  for (const auto& c : store.sorted_coords()) {
    const VoxelBlock* b = store.find(c);
    for (int z = 0; z < kBlockSide; ++z) {
      const Voxel& v = b->voxels[VoxelBlock::index(0, 0, z)];
      const double center_z = voxel_center(c, 0, 0, z, cfg).z();
      if (v.observed()) max_abs = std::max(max_abs, std::abs(v.sdf));
      // Voxels more than mu behind or in front of the wall stay empty.
      if (c.x == 0 && c.y == 0 && std::abs(2.0 - center_z) > 0.06 + 1e-12) {
        EXPECT_FALSE(v.observed()) << center_z;
      }
    }
  }
  EXPECT_LE(max_abs, 0.06);
}

TEST(Deintegrate, ExactInverseLeavesVolumeEmpty) {
  Gen gen(51);
  const Intrinsics k = small_camera(32, 24);
  TwoTierStore store(small_config());
  store.stream(Vec3::Zero());
  const Keyframe kf = random_keyframe(gen, 0, k);
  const Pose pose = gen.pose(0.3, 0.3);
  const std::size_t allocated = integrate(store, kf, pose, k).blocks;
  EXPECT_GT(allocated, 0u);
  deintegrate(store, kf, pose, k);
  for (const auto& c : store.sorted_coords()) {
    for (const Voxel& v : store.find(c)->voxels) {
      EXPECT_FALSE(v.observed());
    }
  }
  EXPECT_EQ(store.garbage_collect(), allocated);
  EXPECT_EQ(store.block_count(), 0u);
}

TEST(Deintegrate, RemovingOneKeyframeEqualsNeverAddingIt) {
  Gen gen(53);
  const Intrinsics k = small_camera(32, 24);
  for (int trial = 0; trial < 8; ++trial) {
    const Keyframe a = random_keyframe(gen, 0, k);
    const Keyframe b = random_keyframe(gen, 1, k);
    const Pose pa = gen.pose(0.2, 0.2);
    const Pose pb = gen.pose(0.2, 0.2);
    TwoTierStore both(small_config());
    both.stream(Vec3::Zero());
    integrate(both, a, pa, k);
    integrate(both, b, pb, k);
    deintegrate(both, a, pa, k);
    TwoTierStore only_b(small_config());
    only_b.stream(Vec3::Zero());
    integrate(only_b, b, pb, k);
    const Diff d = diff_volumes(both, only_b);
    EXPECT_FALSE(d.observed_mismatch);
    EXPECT_LE(d.sdf, 1e-9);
    EXPECT_LE(d.color, 1e-9);
    EXPECT_LE(d.weight, 1e-12);
  }
}

TEST(Deintegrate, NeverIntegratedKeyframeIsRejectedAtomically) {
  Gen gen(55);
  const Intrinsics k = small_camera(32, 24);
  TwoTierStore store(small_config());
  store.stream(Vec3::Zero());
  const Keyframe a = random_keyframe(gen, 0, k);
  integrate(store, a, Pose::identity(), k);
  const double before = total_weight(store);
  const Keyframe other = random_keyframe(gen, 1, k);
  try {
    deintegrate(store, other, Pose::from_translation(Vec3(0.0, 0.0, 0.5)), k);
    FAIL() << "expected an inconsistency";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInconsistentDeintegration);
  }
  EXPECT_EQ(total_weight(store), before);
}

TEST(Deintegrate, WrongPoseIsDetected) {
  Gen gen(57);
  const Intrinsics k = small_camera(32, 24);
  TwoTierStore store(small_config());
  store.stream(Vec3::Zero());
  const Keyframe a = random_keyframe(gen, 0, k);
  integrate(store, a, Pose::identity(), k);
  bool detected = false;
  try {
    deintegrate(store, a, Pose::from_translation(Vec3(0.013, 0.0, 0.0)), k);
    detected = total_weight(store) > 1e-9;  // residual left behind
  } catch (const Error& e) {
    detected = e.code() == ErrorCode::kInconsistentDeintegration;
  }
  EXPECT_TRUE(detected);
}

TEST(Integrate, OrderIndependentAndWeightsAdd) {
  Gen gen(59);
  const Intrinsics k = small_camera(32, 24);
  std::vector<std::pair<Keyframe, Pose>> items;
  for (int i = 0; i < 5; ++i) items.emplace_back(random_keyframe(gen, i, k), gen.pose(0.2, 0.2));
  TwoTierStore forward(small_config());
  forward.stream(Vec3::Zero());
  for (const auto& [kf, pose] : items) integrate(forward, kf, pose, k);
  double separate = 0.0;
  for (const auto& [kf, pose] : items) {
    TwoTierStore single(small_config());
    single.stream(Vec3::Zero());
    integrate(single, kf, pose, k);
    separate += total_weight(single);
  }
  EXPECT_NEAR(total_weight(forward), separate, 1e-9 * separate);
  for (int trial = 0; trial < 3; ++trial) {
    std::shuffle(items.begin(), items.end(), gen.engine());
    TwoTierStore shuffled(small_config());
    shuffled.stream(Vec3::Zero());
    for (const auto& [kf, pose] : items) integrate(shuffled, kf, pose, k);
    const Diff d = diff_volumes(forward, shuffled);
    EXPECT_FALSE(d.observed_mismatch);
    EXPECT_LE(d.sdf, 1e-9);
    EXPECT_LE(d.weight, 1e-9);
  }
}

class Streaming : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg.voxel_size = 0.05;
    cfg.truncation = 0.1;
    cfg.stream_radius = 1.0;
    Gen gen(61);
    std::set<BlockCoord> coords;
    while (coords.size() < 600) {
      coords.insert(BlockCoord{gen.integer(-10, 10), gen.integer(-10, 10), gen.integer(-10, 10)});
    }
    store = std::make_unique<TwoTierStore>(cfg);
    for (const auto& c : coords) {
      auto b = std::make_unique<VoxelBlock>();
      b->coord = c;
      b->voxels[0].weight = 1.0;
      store->insert_host(std::move(b));
    }
  }

  std::set<BlockCoord> inside(const Vec3& center) const {
    std::set<BlockCoord> out;
    for (const auto& c : store->sorted_coords()) {
      if ((block_center(c, cfg) - center).norm() <= cfg.stream_radius) out.insert(c);
    }
    return out;
  }

  void expect_tiers(const Vec3& center) const {
    for (const auto& c : store->sorted_coords()) {
      const bool in = (block_center(c, cfg) - center).norm() <= cfg.stream_radius;
      EXPECT_EQ(in, !store->in_host(c));
    }
    EXPECT_EQ(store->active_count() + store->host_count(), 600u);
  }

  VolumeConfig cfg;
  std::unique_ptr<TwoTierStore> store;
};

TEST_F(Streaming, RepeatedCenterMovesNothing) {
  const StreamCounters first = store->stream(Vec3::Zero());
  EXPECT_EQ(first.sphere_relocations, 0u);
  EXPECT_EQ(first.blocks_streamed_in, inside(Vec3::Zero()).size());
  const StreamCounters again = store->stream(Vec3::Zero());
  EXPECT_EQ(again, StreamCounters{});
  expect_tiers(Vec3::Zero());
}

TEST_F(Streaming, DisjointSpheresSwapEverything) {
  store->stream(Vec3::Zero());
  const std::size_t active = store->active_count();
  const Vec3 far(2.5, 0, 0);
  const StreamCounters d = store->stream(far);
  EXPECT_EQ(d.blocks_streamed_out, active);
  EXPECT_EQ(d.blocks_streamed_in, inside(far).size());
  EXPECT_EQ(d.sphere_relocations, 1u);
  expect_tiers(far);
}

TEST_F(Streaming, HalfRadiusMoveMovesSymmetricDifference) {
  const Vec3 a = Vec3::Zero();
  const Vec3 b(0.0, 0.5, 0.0);
  store->stream(a);
  const auto sa = inside(a);
  const auto sb = inside(b);
  std::size_t only_a = 0, only_b = 0;
  for (const auto& c : sa) only_a += sb.count(c) == 0;
  for (const auto& c : sb) only_b += sa.count(c) == 0;
  const StreamCounters d = store->stream(b);
  EXPECT_EQ(d.blocks_streamed_out, only_a);
  EXPECT_EQ(d.blocks_streamed_in, only_b);
  expect_tiers(b);
}

TEST_F(Streaming, RelocationNeedsMoreThanOneBlock) {
  store->stream(Vec3::Zero());
  EXPECT_EQ(store->stream(Vec3(0.39, 0, 0)).sphere_relocations, 0u);
  EXPECT_EQ(store->stream(Vec3(0.39, 0.41, 0)).sphere_relocations, 1u);
  EXPECT_EQ(store->counters().sphere_relocations, 1u);
}

TEST(GarbageCollect, MatchesBruteForceCount) {
  Gen gen(63);
  VolumeConfig cfg = small_config();
  TwoTierStore store(cfg);
  std::size_t empty = 0;
  for (int i = 0; i < 200; ++i) {
    auto b = std::make_unique<VoxelBlock>();
    b->coord = BlockCoord{i, 0, 0};
    if (gen.coin(0.4)) {
      b->voxels[gen.integer(0, kVoxelsPerBlock - 1)].weight = 0.5;
    } else {
      ++empty;
    }
    store.insert_host(std::move(b));
  }
  store.stream(Vec3(0.5, 0, 0));
  EXPECT_GT(store.active_count(), 0u);
  EXPECT_EQ(store.garbage_collect(), empty);
  EXPECT_EQ(store.block_count(), 200u - empty);
  EXPECT_EQ(store.garbage_collect(), 0u);
}

TEST(VolumeIo, RoundTripIsBitExact) {
  Gen gen(65);
  const Intrinsics k = small_camera(32, 24);
  TwoTierStore store(small_config());
  store.stream(Vec3::Zero());
  integrate(store, random_keyframe(gen, 0, k), gen.pose(0.2, 0.2), k);
  std::stringstream buf;
  write_volume(buf, store);
  const TwoTierStore loaded = read_volume(buf, small_config());
  EXPECT_EQ(loaded.block_count(), store.block_count());
  EXPECT_EQ(loaded.config().voxel_size, store.config().voxel_size);
  EXPECT_EQ(loaded.config().truncation, store.config().truncation);
  for (const auto& c : store.sorted_coords()) {
    const VoxelBlock* a = store.find(c);
    const VoxelBlock* b = loaded.find(c);
    ASSERT_NE(b, nullptr);
    for (int i = 0; i < kVoxelsPerBlock; ++i) {
      EXPECT_EQ(a->voxels[i].sdf, b->voxels[i].sdf);
      EXPECT_EQ(a->voxels[i].weight, b->voxels[i].weight);
      EXPECT_EQ(a->voxels[i].color, b->voxels[i].color);
    }
  }
}

TEST(VolumeIo, RejectsBadInput) {
  std::stringstream bad_magic("SDFV2xxxxxxxxxxxxxxxxxxxxxxxx");
  EXPECT_THROW(read_volume(bad_magic), Error);
  TwoTierStore store(small_config());
  auto b = std::make_unique<VoxelBlock>();
  b->voxels[3].weight = 1.0;
  store.insert_host(std::move(b));
  std::stringstream buf;
  write_volume(buf, store);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 100);
  std::stringstream truncated(bytes);
  try {
    read_volume(truncated);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormat);
  }
}

}  // namespace
}  // namespace kfrecon

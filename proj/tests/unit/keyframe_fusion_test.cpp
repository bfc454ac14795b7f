#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <vector>

#include "kfrecon/error.hpp"
#include "kfrecon/keyframe_fusion.hpp"
#include "test_support.hpp"

namespace kfrecon {
namespace {

using testing::Gen;
using testing::small_camera;

ColorImage checkerboard(int w, int h, int cell) {
  ColorImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool dark = ((x / cell) + (y / cell)) % 2 == 0;
      img(x, y) = dark ? Rgb8{30, 40, 50} : Rgb8{220, 210, 200};
    }
  }
  return img;
}

bool interior(int x, int y, const Intrinsics& k) {
  return x > 0 && y > 0 && x + 1 < k.width && y + 1 < k.height;
}

TEST(DepthSampleWeight, Examples) {
  const Vec3 facing(0, 0, -1);
  EXPECT_DOUBLE_EQ(depth_sample_weight(1.0, facing, Vec3(0, 0, 1)), 1.0);
  const double a = std::numbers::pi / 3;
  const Vec3 tilted(0, -std::sin(a), -std::cos(a));
  EXPECT_NEAR(depth_sample_weight(2.0, tilted, Vec3(0, 0, 1)), 0.125, 1e-12);
  EXPECT_EQ(depth_sample_weight(0.0, facing, Vec3(0, 0, 1)), 0.0);
  EXPECT_EQ(depth_sample_weight(1.0, -facing, Vec3(0, 0, 1)), 0.0);
}

TEST(DepthWeights, TiltedPlaneMatchesAnalyticCosine) {
  const Intrinsics k = small_camera();
  const Vec3 n = Vec3(0.3, -0.2, -1.0).normalized();
  const double d = -2.0;  // n.p = d with p.z ~ 2
  const DepthMap depth = testing::plane_depth(k, n, d);
  const Image<double> w = depth_weights(depth, k);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (!interior(x, y, k)) {
        EXPECT_EQ(w(x, y), 0.0);
        continue;
      }
      const Vec3 ray = Vec3((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0).normalized();
      const double z = depth(x, y);
      EXPECT_NEAR(w(x, y), -n.dot(ray) / (z * z), 1e-9);
    }
  }
}

TEST(DiscontinuityMask, ConstantPlaneKeepsEverything) {
  const Intrinsics k = small_camera();
  const Mask m = discontinuity_mask(testing::flat_depth(k, 1.5), 0.1);
  EXPECT_TRUE(std::all_of(m.data().begin(), m.data().end(), [](auto v) { return v == 0; }));
}

TEST(DiscontinuityMask, StepEdgeMarksBothSides) {
  DepthMap depth(20, 10, 1.0);
  for (int y = 0; y < 10; ++y)
    for (int x = 10; x < 20; ++x) depth(x, y) = 1.5;
  const Mask m = discontinuity_mask(depth, 0.1);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 20; ++x) {
      EXPECT_EQ(m(x, y) != 0, x == 9 || x == 10) << x << "," << y;
    }
  }
}

TEST(DiscontinuityMask, InvalidPixelDiscardsItsNeighbors) {
  DepthMap depth(9, 9, 2.0);
  depth(4, 4) = 0.0;
  const Mask m = discontinuity_mask(depth, 0.1);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 9; ++x) {
      const bool near = std::abs(x - 4) <= 1 && std::abs(y - 4) <= 1;
      EXPECT_EQ(m(x, y) != 0, near);
    }
  }
}

TEST(FuseDepth, FirstObservationCopiesDepthAndWeight) {
  const Intrinsics k = small_camera();
  const DepthMap depth = testing::flat_depth(k, 2.0);
  Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  fuse_depth(kf, FrameObservation{1, testing::gradient_color(k), depth, Pose::identity()}, k, {});
  const Image<double> w = depth_weights(depth, k);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (w(x, y) > 0.0) {
        EXPECT_EQ(kf.depth(x, y), 2.0);
        EXPECT_EQ(kf.weight(x, y), w(x, y));
      } else {
        EXPECT_EQ(kf.weight(x, y), 0.0);
        EXPECT_EQ(kf.depth(x, y), 0.0);
      }
    }
  }
  EXPECT_EQ(kf.members, std::vector<int>{1});
}

TEST(FuseDepth, SecondObservationFollowsRunningAverage) {
  const Intrinsics k = small_camera();
  const DepthMap d1 = testing::flat_depth(k, 2.0);
  const DepthMap d2 = testing::flat_depth(k, 2.2);
  Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  const ColorImage c = testing::gradient_color(k);
  fuse_depth(kf, FrameObservation{1, c, d1, Pose::identity()}, k, {});
  fuse_depth(kf, FrameObservation{2, c, d2, Pose::identity()}, k, {});
  const Image<double> w1 = depth_weights(d1, k);
  const Image<double> w2 = depth_weights(d2, k);
  for (int y = 1; y + 1 < k.height; ++y) {
    for (int x = 1; x + 1 < k.width; ++x) {
      const double expected = (w1(x, y) * 2.0 + w2(x, y) * 2.2) / (w1(x, y) + w2(x, y));
      EXPECT_NEAR(kf.depth(x, y), expected, 1e-12);
      EXPECT_NEAR(kf.weight(x, y), w1(x, y) + w2(x, y), 1e-15);
    }
  }
  // Equal weights reduce to the midpoint.
  Keyframe manual = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  manual.depth(5, 5) = 2.0;
  manual.weight(5, 5) = 1.0;
  const double z = (manual.weight(5, 5) * manual.depth(5, 5) + 1.0 * 2.2) / 2.0;
  EXPECT_NEAR(z, 2.1, 1e-15);
}

TEST(FuseDepth, WarpsThroughRelativePose) {
  // A frame 0.3 m behind the keyframe sees the same wall 0.3 m farther away.
  const Intrinsics k = small_camera();
  const Pose kf_pose = Pose::identity();
  const Pose frame_pose = Pose::from_translation(Vec3(0, 0, -0.3));
  Keyframe kf = Keyframe::open(0, k, kf_pose, 0, Pose::identity());
  fuse_depth(kf, FrameObservation{1, testing::gradient_color(k), testing::flat_depth(k, 2.3), frame_pose},
             k, {});
  std::size_t hits = 0;
  for (double z : kf.depth.data()) {
    if (z > 0.0) {
      EXPECT_NEAR(z, 2.0, 1e-12);
      ++hits;
    }
  }
  EXPECT_GT(hits, static_cast<std::size_t>(k.width * k.height / 2));
}

TEST(FuseDepth, MaxRangeDropsFarSamples) {
  const Intrinsics k = small_camera();
  FusionParams params;
  params.max_range = 1.0;
  Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  fuse_depth(kf, FrameObservation{1, testing::gradient_color(k), testing::flat_depth(k, 2.0), Pose::identity()},
             k, params);
  EXPECT_EQ(kf.valid_pixel_count(), 0u);
}

TEST(FuseDepth, OrderIndependentUpToRounding) {
  Gen gen(21);
  const Intrinsics k = small_camera(48, 36);
  const Vec3 n = Vec3(0.1, 0.2, -1.0).normalized();
  std::vector<FrameObservation> frames;
  for (int i = 0; i < 6; ++i) {
    const Pose pose = gen.pose(0.03, 0.05);
    // Plane fixed in the keyframe (world) frame, rendered from each pose.
    const Pose inv = pose.inverse();
    const Vec3 n_cam = inv.rotation() * n;
    const double d_cam = -2.0 - n.dot(pose.translation());
    frames.push_back({i + 1, testing::gradient_color(k), testing::plane_depth(k, n_cam, d_cam), pose});
  }
  FusionParams params;
  params.collect_color = false;
  Keyframe a = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  for (const auto& f : frames) fuse_depth(a, f, k, params);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(frames.begin(), frames.end(), gen.engine());
    Keyframe b = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
    for (const auto& f : frames) fuse_depth(b, f, k, params);
    for (std::size_t i = 0; i < a.depth.size(); ++i) {
      ASSERT_EQ(a.weight.data()[i] > 0.0, b.weight.data()[i] > 0.0);
      if (a.weight.data()[i] <= 0.0) continue;
      EXPECT_LE(std::abs(a.depth.data()[i] - b.depth.data()[i]), 1e-9 * a.depth.data()[i]);
      EXPECT_LE(std::abs(a.weight.data()[i] - b.weight.data()[i]), 1e-12 * a.weight.data()[i]);
    }
  }
}

TEST(FuseDepth, RejectsMismatchedSizes) {
  const Intrinsics k = small_camera();
  Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  FrameObservation f{1, ColorImage(10, 10), DepthMap(10, 10, 1.0), Pose::identity()};
  EXPECT_THROW(fuse_depth(kf, f, k, {}), Error);
}

TEST(Sharpness, ConstantImageIsSharp) {
  EXPECT_EQ(sharpness(GrayImage(32, 32, 90.0)), 1.0);
}

TEST(Sharpness, BlurLowersSharpness) {
  const ColorImage board = checkerboard(64, 64, 8);
  const double sharp = sharpness(to_gray(board));
  const double soft = sharpness(to_gray(gaussian_blur(board, 2.5)));
  EXPECT_GT(sharp, soft);
  EXPECT_GE(soft, 0.0);
  EXPECT_LE(sharp, 1.0);
  EXPECT_EQ(sharp, sharpness(to_gray(board)));
}

TEST(Sharpness, MonotoneInBlurStrength) {
  const ColorImage board = checkerboard(64, 64, 8);
  double previous = sharpness(to_gray(board));
  for (double sigma : {0.8, 1.5, 3.0, 5.0}) {
    const double s = sharpness(to_gray(gaussian_blur(board, sigma)));
    EXPECT_LT(s, previous) << sigma;
    previous = s;
  }
}

TEST(UnsharpMask, ConstantAndZeroGainAreIdentity) {
  const ColorImage flat(16, 16, Rgb8{77, 88, 99});
  EXPECT_EQ(unsharp_mask(flat, 1.5, 0.5), flat);
  const ColorImage board = checkerboard(16, 16, 4);
  EXPECT_EQ(unsharp_mask(board, 1.5, 0.0), board);
}

TEST(UnsharpMask, StepEdgeOvershootsOnBothSides) {
  ColorImage step(20, 4, Rgb8{50, 50, 50});
  for (int y = 0; y < 4; ++y)
    for (int x = 10; x < 20; ++x) step(x, y) = Rgb8{200, 200, 200};
  const ColorImage out = unsharp_mask(step, 1.5, 1.0);
  EXPECT_LT(out(9, 2)[0], 50);
  EXPECT_GT(out(10, 2)[0], 200);
  EXPECT_EQ(out(0, 2)[0], 50);
  EXPECT_EQ(out(19, 2)[0], 200);
}

TEST(WeightedMedian, Examples) {
  std::vector<WeightedSample> a{{10, 1}, {200, 1}, {12, 1}};
  EXPECT_EQ(weighted_median(a), 12);
  std::vector<WeightedSample> b{{10, 3}, {200, 1}};
  EXPECT_EQ(weighted_median(b), 10);
  std::vector<WeightedSample> tie{{20, 1}, {10, 1}};
  EXPECT_EQ(weighted_median(tie), 10);
  std::vector<WeightedSample> none;
  EXPECT_THROW(weighted_median(none), Error);
}

// Oracle: the smallest value v with weight(<= v) >= total / 2.
double median_oracle(const std::vector<WeightedSample>& s) {
  double total = 0.0;
  for (const auto& x : s) total += x.weight;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& cand : s) {
    double below = 0.0;
    for (const auto& x : s)
      if (x.value <= cand.value) below += x.weight;
    if (2.0 * below >= total) best = std::min(best, cand.value);
  }
  return best;
}

TEST(WeightedMedian, InvariantUnderScalingAndPermutation) {
  Gen gen(31);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<WeightedSample> s;
    const int n = gen.integer(1, 12);
    for (int i = 0; i < n; ++i) {
      // Dyadic weights keep the scaled sums exact.
      s.push_back({static_cast<double>(gen.integer(0, 255)), gen.integer(1, 8) / 4.0});
    }
    const double expected = median_oracle(s);
    auto copy = s;
    EXPECT_EQ(weighted_median(copy), expected);
    std::shuffle(copy.begin(), copy.end(), gen.engine());
    EXPECT_EQ(weighted_median(copy), expected);
    for (auto& x : copy) x.weight *= 8.0;
    EXPECT_EQ(weighted_median(copy), expected);
  }
}

TEST(FuseColor, SingleMemberReproducesSharpenedInput) {
  const Intrinsics k = small_camera();
  const ColorImage color = testing::gradient_color(k);
  const Keyframe kf =
      testing::single_frame_keyframe(0, testing::flat_depth(k, 2.0), color, Pose::identity(), k);
  const ColorImage sharpened = unsharp_mask(color, 1.5, 0.5);
  EXPECT_TRUE(kf.observations.empty());
  EXPECT_TRUE(kf.color_finalized);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (kf.weight(x, y) <= 0.0) {
        EXPECT_EQ(kf.has_color(x, y), 0);
        EXPECT_EQ(kf.color(x, y)[0], kNeutralGray);
        continue;
      }
      ASSERT_EQ(kf.has_color(x, y), 1);
      for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(kf.color(x, y)[ch], sharpened(x, y)[ch], 1e-6);
    }
  }
}

TEST(FuseColor, SharperMemberWins) {
  const Intrinsics k = small_camera();
  const ColorImage sharp = checkerboard(k.width, k.height, 6);
  ColorImage blurred = gaussian_blur(sharp, 3.0);
  const DepthMap depth = testing::flat_depth(k, 2.0);
  Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  fuse_depth(kf, FrameObservation{1, blurred, depth, Pose::identity()}, k, {});
  fuse_depth(kf, FrameObservation{2, sharp, depth, Pose::identity()}, k, {});
  ASSERT_GT(kf.observations[1].sharpness, kf.observations[0].sharpness);
  fuse_color(kf, k, {});
  const ColorImage expected = unsharp_mask(sharp, 1.5, 0.5);
  for (int y = 1; y + 1 < k.height; ++y) {
    for (int x = 1; x + 1 < k.width; ++x) {
      for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(kf.color(x, y)[ch], expected(x, y)[ch]);
    }
  }
}

TEST(FuseColor, OccludedObservationsLeavePixelColorless) {
  const Intrinsics k = small_camera(16, 12);
  Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  kf.depth = testing::flat_depth(k, 2.0);
  kf.weight = Image<double>(k.width, k.height, 1.0);
  MemberObservation obs;
  obs.index = 1;
  obs.color = ColorImage(k.width, k.height, Rgb8{10, 20, 30});
  obs.depth = testing::flat_depth(k, 2.2);  // disagrees by more than 5 cm
  obs.weight = Image<double>(k.width, k.height, 1.0);
  kf.observations.push_back(obs);
  fuse_color(kf, k, {});
  for (std::size_t i = 0; i < kf.color.size(); ++i) {
    EXPECT_EQ(kf.has_color.data()[i], 0);
    EXPECT_EQ(kf.color.data()[i][1], kNeutralGray);
  }
}

TEST(OverlapRatio, IdenticalPoseIsFull) {
  const Intrinsics k = small_camera();
  const DepthMap depth = testing::flat_depth(k, 2.0);
  const Keyframe kf = testing::single_frame_keyframe(0, depth, testing::gradient_color(k),
                                                     Pose::identity(), k);
  EXPECT_DOUBLE_EQ(overlap_ratio(kf, FrameObservation{2, {}, depth, Pose::identity()}, k, {}), 1.0);
}

TEST(OverlapRatio, OppositeViewIsEmpty) {
  const Intrinsics k = small_camera();
  const DepthMap depth = testing::flat_depth(k, 2.0);
  const Keyframe kf = testing::single_frame_keyframe(0, depth, testing::gradient_color(k),
                                                     Pose::identity(), k);
  const Pose turned = Pose::from_axis_angle(Vec3::UnitY(), std::numbers::pi, Vec3::Zero());
  EXPECT_EQ(overlap_ratio(kf, FrameObservation{2, {}, depth, turned}, k, {}), 0.0);
}

TEST(OverlapRatio, HalfImageShiftOnWall) {
  const Intrinsics k = small_camera(160, 120);
  const double z = 2.0;
  const DepthMap depth = testing::flat_depth(k, z);
  const Keyframe kf = testing::single_frame_keyframe(0, depth, testing::gradient_color(k),
                                                     Pose::identity(), k);
  const double shift = 0.5 * k.width / k.fx * z;
  const Pose moved = Pose::from_translation(Vec3(shift, 0, 0));
  EXPECT_NEAR(overlap_ratio(kf, FrameObservation{2, {}, depth, moved}, k, {}), 0.5, 0.02);
}

TEST(OverlapRatio, EmptyKeyframeIsUndefined) {
  const Intrinsics k = small_camera();
  const Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
  try {
    overlap_ratio(kf, FrameObservation{1, {}, testing::flat_depth(k, 1.0), Pose::identity()}, k, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUndefinedOverlap);
  }
}

class Decision : public ::testing::Test {
 protected:
  Intrinsics k = small_camera();
  DepthMap depth = testing::flat_depth(small_camera(), 2.0);
  FusionParams params;

  Keyframe keyframe_with(int members) {
    Keyframe kf = Keyframe::open(0, k, Pose::identity(), 0, Pose::identity());
    for (int i = 0; i < members; ++i) {
      fuse_depth(kf, FrameObservation{i + 1, testing::gradient_color(k), depth, Pose::identity()}, k,
                 params);
    }
    return kf;
  }
};

TEST_F(Decision, ConstantCountBoundary) {
  KeyframeStrategy s;
  s.kappa = 5;
  const FrameObservation next{6, {}, depth, Pose::identity()};
  EXPECT_TRUE(keyframe_decision(s, keyframe_with(5), next, {}, k, params));
  EXPECT_FALSE(keyframe_decision(s, keyframe_with(4), next, {}, k, params));
  EXPECT_FALSE(keyframe_decision(s, keyframe_with(0), next, {}, k, params));
}

TEST_F(Decision, DistanceThresholds) {
  KeyframeStrategy s;
  s.kind = KeyframeStrategyKind::kDist;
  s.max_translation = 0.3;
  s.max_rotation = 0.2;
  const Keyframe kf = keyframe_with(1);
  auto at = [&](const Pose& p) { return FrameObservation{2, {}, depth, p}; };
  EXPECT_TRUE(keyframe_decision(s, kf, at(Pose::from_translation(Vec3(0.31, 0, 0))), {}, k, params));
  EXPECT_FALSE(keyframe_decision(s, kf, at(Pose::from_translation(Vec3(0.29, 0, 0))), {}, k, params));
  EXPECT_TRUE(keyframe_decision(s, kf, at(Pose::from_axis_angle(Vec3::UnitY(), 0.21, Vec3::Zero())),
                                {}, k, params));
}

TEST_F(Decision, OverlapAndDvo) {
  KeyframeStrategy s;
  s.kind = KeyframeStrategyKind::kOverlap;
  s.overlap_min = 0.7;
  const Keyframe kf = keyframe_with(1);
  EXPECT_FALSE(keyframe_decision(s, kf, FrameObservation{2, {}, depth, Pose::identity()}, {}, k, params));
  const Pose away = Pose::from_axis_angle(Vec3::UnitY(), std::numbers::pi, Vec3::Zero());
  EXPECT_TRUE(keyframe_decision(s, kf, FrameObservation{2, {}, depth, away}, {}, k, params));

  s.kind = KeyframeStrategyKind::kDvo;
  const std::vector<bool> flags{false, true, false, true};
  EXPECT_TRUE(keyframe_decision(s, kf, FrameObservation{3, {}, depth, Pose::identity()}, flags, k, params));
  EXPECT_FALSE(keyframe_decision(s, kf, FrameObservation{2, {}, depth, Pose::identity()}, flags, k, params));
  EXPECT_FALSE(keyframe_decision(s, kf, FrameObservation{9, {}, depth, Pose::identity()}, flags, k, params));
}

TEST(KeyframeStrategy, Validation) {
  KeyframeStrategy s;
  EXPECT_NO_THROW(s.validate());
  s.kappa = 0;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.overlap_min = 1.0;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.max_translation = 0.0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(Keyframe, PoseFollowsAnchor) {
  Gen gen(41);
  for (int i = 0; i < 50; ++i) {
    const Pose anchor = gen.pose();
    const Pose pose = gen.pose();
    Keyframe kf = Keyframe::open(0, small_camera(8, 6), pose, 3, anchor);
    const Pose rebuilt = anchor * kf.rel_pose;
    EXPECT_LT((rebuilt.translation() - pose.translation()).norm(), 1e-9);
    EXPECT_LT((rebuilt.rotation() - pose.rotation()).norm(), 1e-9);
    const Pose moved = gen.pose();
    kf.reanchor(moved);
    EXPECT_EQ(kf.pose, moved * kf.rel_pose);
  }
}

TEST(Keyframe, EveryFrameBelongsToExactlyOneKeyframe) {
  Gen gen(43);
  const Intrinsics k = small_camera(24, 18);
  const DepthMap depth = testing::flat_depth(k, 2.0);
  FusionParams params;
  params.collect_color = false;
  for (auto kind : {KeyframeStrategyKind::kConst, KeyframeStrategyKind::kDist,
                    KeyframeStrategyKind::kDvo, KeyframeStrategyKind::kOverlap}) {
    KeyframeStrategy s;
    s.kind = kind;
    s.kappa = 4;
    s.max_translation = 0.1;
    std::vector<bool> flags(41, false);
    for (int i = 1; i <= 40; i += 7) flags[i] = true;
    std::vector<Keyframe> closed;
    std::optional<Keyframe> open;
    Vec3 position = Vec3::Zero();
    for (int i = 1; i <= 40; ++i) {
      position += Vec3(gen.uniform(0.0, 0.04), 0, 0);
      const FrameObservation f{i, {}, depth, Pose::from_translation(position)};
      if (open && keyframe_decision(s, *open, f, flags, k, params)) {
        closed.push_back(std::move(*open));
        open.reset();
      }
      if (!open) open = Keyframe::open(static_cast<int>(closed.size()), k, f.pose, 0, Pose::identity());
      fuse_depth(*open, f, k, params);
    }
    closed.push_back(std::move(*open));
    std::vector<int> seen;
    for (const auto& kf : closed) {
      EXPECT_FALSE(kf.members.empty());
      seen.insert(seen.end(), kf.members.begin(), kf.members.end());
    }
    std::vector<int> expected(40);
    std::iota(expected.begin(), expected.end(), 1);
    EXPECT_EQ(seen, expected);
    if (kind == KeyframeStrategyKind::kConst) {
      EXPECT_EQ(closed.size(), 10u);
    }
  }
}

}  // namespace
}  // namespace kfrecon

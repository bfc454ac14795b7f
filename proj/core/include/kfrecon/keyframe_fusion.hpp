#pragma once

#include <span>
#include <vector>

#include "kfrecon/geometry.hpp"
#include "kfrecon/image.hpp"

namespace kfrecon {

struct FrameObservation {
  int index = 0;  // 1-based input frame index
  ColorImage color;
  DepthMap depth;
  Pose pose;  // best estimate at arrival
};

/// Color assigned to keyframe pixels without any valid color sample.
inline constexpr double kNeutralGray = 127.5;

struct FusionParams {
  double discontinuity_threshold = 0.1;  // meters
  double occlusion_tolerance = 0.05;     // meters
  double unsharp_sigma = 1.5;            // pixels
  double unsharp_gain = 0.5;
  /// Input samples farther than this from the camera center are dropped.
  /// Zero disables the cut.
  double max_range = 0.0;
  /// Keep member color images for fuse_color(). Depth-only users may turn
  /// this off to save memory.
  bool collect_color = true;
};

/// Color evidence of one member frame, held until fuse_color() runs.
struct MemberObservation {
  int index = 0;
  Pose relative_pose;  // member camera -> keyframe camera
  ColorImage color;    // unsharp-masked input color
  DepthMap depth;
  Image<double> weight;  // w_z per pixel, zero where discarded
  double sharpness = 1.0;
};

struct Keyframe {
  int id = 0;
  DepthMap depth;          // fused depth Z*
  Image<double> weight;    // fusion weights W*
  Image<RgbD> color;       // fused color C* (0..255 per channel)
  Mask has_color;          // 0 marks colorless pixels
  Pose pose;               // T*
  int anchor_id = 0;
  Pose rel_pose;           // anchor -> keyframe
  std::vector<int> members;
  std::vector<MemberObservation> observations;
  bool color_finalized = false;

  /// Empty keyframe with pose T* = pose, anchored so that
  /// pose == anchor_pose * rel_pose.
  static Keyframe open(int id, const Intrinsics& k, const Pose& pose,
                       int anchor_id, const Pose& anchor_pose);

  /// Re-derive T* after the anchor pose changed.
  void reanchor(const Pose& anchor_pose) { pose = anchor_pose * rel_pose; }

  bool empty() const { return members.empty(); }
  std::size_t valid_pixel_count() const;
  /// Pixels held in the fused keyframe images (the per-keyframe footprint).
  std::size_t retained_pixel_count() const { return depth.size(); }
};

/// Normals from central differences of unprojected neighbors, oriented
/// towards the camera. Zero where any of the four neighbors is missing.
Image<Vec3> compute_normals(const DepthMap& depth, const Intrinsics& k);

/// cos(theta) * z^-2, theta between the normal and the viewing ray; 0 for
/// invalid depth or back-facing normals.
double depth_sample_weight(double z, const Vec3& normal, const Vec3& ray_dir);

/// depth_sample_weight() for every pixel.
Image<double> depth_weights(const DepthMap& depth, const Intrinsics& k);

/// Nonzero where a pixel must be discarded: invalid, next to an invalid
/// pixel, or with a jump above `threshold` to any 8-neighbor.
Mask discontinuity_mask(const DepthMap& depth, double threshold);

/// Running weighted average of frame depth into the keyframe (nearest-pixel
/// scatter). Also records the frame as a member.
void fuse_depth(Keyframe& kf, const FrameObservation& frame,
                const Intrinsics& k, const FusionParams& params);

/// 1 - perceived blur (no-reference re-blur metric). 1 means sharp; an image
/// without any gradient counts as sharp.
double sharpness(const GrayImage& image);

/// clamp(in + gain * (in - gaussian(in, sigma))) per channel.
ColorImage unsharp_mask(const ColorImage& image, double sigma, double gain);

struct WeightedSample {
  double value;
  double weight;
};

/// Lowest value whose cumulative weight reaches half the total mass.
/// Requires a non-empty input with positive total weight.
double weighted_median(std::span<WeightedSample> samples);

/// Finalizes C* from the member observations and drops them.
void fuse_color(Keyframe& kf, const Intrinsics& k, const FusionParams& params);

/// Fraction of the keyframe's valid pixels that are visible in `frame`.
/// Throws kUndefinedOverlap for a keyframe without valid depth.
double overlap_ratio(const Keyframe& kf, const FrameObservation& frame,
                     const Intrinsics& k, const FusionParams& params);

enum class KeyframeStrategyKind { kConst, kDvo, kDist, kOverlap };

struct KeyframeStrategy {
  KeyframeStrategyKind kind = KeyframeStrategyKind::kConst;
  int kappa = 20;                 // frames per keyframe
  double max_rotation = 0.2;      // radians
  double max_translation = 0.2;   // meters
  double overlap_min = 0.7;

  void validate() const;
};

/// True when a new keyframe has to be started before `frame` is fused.
/// `dvo_flags[i]` marks frame index i as a SLAM keyframe.
bool keyframe_decision(const KeyframeStrategy& strategy, const Keyframe& kf,
                       const FrameObservation& frame,
                       const std::vector<bool>& dvo_flags,
                       const Intrinsics& k, const FusionParams& params);

}  // namespace kfrecon

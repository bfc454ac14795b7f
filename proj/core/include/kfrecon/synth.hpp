#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kfrecon/evaluation.hpp"
#include "kfrecon/frame_source.hpp"
#include "kfrecon/geometry.hpp"
#include "kfrecon/image.hpp"

namespace kfrecon {

struct Primitive {
  enum class Kind { kRoomShell, kSphere, kBox };

  Kind kind = Kind::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();  // room shell and box
  double radius = 0.5;               // sphere
  RgbD albedo{200.0, 200.0, 200.0};
  double checker_size = 0.0;         // > 0 darkens alternate cubes of this size

  /// Positive in free space. The room shell is free inside.
  double sdf(const Vec3& p) const;
  double surface_area() const;
};

class AnalyticScene {
 public:
  AnalyticScene() = default;
  explicit AnalyticScene(std::vector<Primitive> primitives)
      : primitives_(std::move(primitives)) {}

  /// 3.0 x 3.0 x 2.4 m room with a table-sized box, two spheres and a
  /// pillar; the room is centered at the origin with the floor at y = 1.2
  /// (camera convention: y down).
  static AnalyticScene desk_room();

  const std::vector<Primitive>& primitives() const { return primitives_; }
  double sdf(const Vec3& p) const;
  Vec3 normal(const Vec3& p) const;
  const Primitive& closest(const Vec3& p) const;
  /// Albedo of the closest primitive at p, including its checker pattern.
  RgbD albedo(const Vec3& p) const;

  /// Uniform samples on the exposed surface (points not buried in another
  /// primitive).
  PointCloud sample_surface(std::size_t n, std::uint64_t seed) const;

 private:
  std::vector<Primitive> primitives_;
};

struct RenderParams {
  double max_depth = 4.0;
  int max_steps = 256;
  double hit_epsilon = 1e-5;
  Vec3 light_direction = Vec3(0.3, -1.0, 0.4).normalized();  // towards the light
  double ambient = 0.35;
};

struct RenderedFrame {
  DepthMap depth;
  ColorImage color;
};

/// Sphere-traced z-depth (0 on miss or beyond max_depth) and Lambert color.
RenderedFrame render(const AnalyticScene& scene, const Pose& pose, const Intrinsics& k,
                     const RenderParams& params = {});
DepthMap render_depth(const AnalyticScene& scene, const Pose& pose, const Intrinsics& k,
                      const RenderParams& params = {});

/// z + N(0, (sigma0 z^2)^2) on valid pixels.
DepthMap add_noise(const DepthMap& depth, double sigma0, std::uint64_t seed);

struct ScheduledCorrection {
  int frame = 0;          // event becomes visible at this input frame
  double fraction = 1.0;  // share of the accumulated drift removed
};

struct TrajectorySpec {
  std::vector<Pose> waypoints;
  int frames_per_segment = 60;
  double drift_translation = 0.0;  // meters per frame
  double drift_rotation = 0.0;     // radians per frame
  std::vector<ScheduledCorrection> schedule;
  int anchor_interval = 10;
  double noise_sigma0 = 0.0;       // 0 disables depth noise
  double blur_max_sigma = 0.0;     // 0 disables per-frame color blur
  std::uint64_t seed = 1;

  void validate() const;
};

/// Camera poses on a closed loop around `center`, looking outwards at the
/// walls with a gentle sinusoidal yaw sway. The last waypoint repeats the
/// first.
std::vector<Pose> orbit_waypoints(const Vec3& center, double radius, int count,
                                  double sway = 0.0);

/// Frames 1, 1 + interval, 1 + 2 interval, ... are anchor frames.
inline bool is_anchor_frame(int index, int interval) {
  return interval > 0 && (index - 1) % interval == 0;
}

/// Rendered-on-demand synthetic dataset.
class SyntheticSequence final : public FrameSource {
 public:
  SyntheticSequence(AnalyticScene scene, const TrajectorySpec& spec, const Intrinsics& k,
                    RenderParams render = {});

  const SequenceInfo& info() const override { return info_; }
  FrameObservation load(std::size_t i) const override;

  const AnalyticScene& scene() const { return scene_; }
  const std::vector<Pose>& ground_truth_poses() const { return ground_truth_; }
  const std::vector<Pose>& drifted_poses() const { return drifted_; }

  /// Same frame rendered at the ground-truth pose and carrying it.
  FrameObservation load_ground_truth(std::size_t i) const;

 private:
  FrameObservation render_frame(std::size_t i, const Pose& carried) const;

  AnalyticScene scene_;
  TrajectorySpec spec_;
  RenderParams render_;
  SequenceInfo info_;
  std::vector<Pose> ground_truth_;
  std::vector<Pose> drifted_;
};

/// Emits the sequence in the on-disk dataset layout.
void write_dataset(const FrameSource& source, const std::filesystem::path& dir);

}  // namespace kfrecon

#pragma once

#include <array>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace kfrecon {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole camera. Pixel (u, v) addresses the center of column u, row v.
struct Intrinsics {
  double fx = 525.0;
  double fy = 525.0;
  double cx = 319.5;
  double cy = 239.5;
  int width = 640;
  int height = 480;

  /// Throws kInvalidArgument unless fx, fy > 0 and the principal point lies
  /// inside the image.
  void validate() const;

  /// Same camera at 1/factor resolution (principal point re-centered).
  Intrinsics downscaled(int factor) const;

  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1.0 &&
           px.y() <= height - 1.0;
  }
};

/// Rigid-body transform x -> R x + t. Maps camera coordinates to world
/// coordinates when used as a camera pose.
class Pose {
 public:
  Pose() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose identity() { return Pose(); }
  static Pose from_translation(const Vec3& t) { return Pose(Mat3::Identity(), t); }
  /// Hamilton quaternion; normalized before use.
  static Pose from_quaternion(const Eigen::Quaterniond& q, const Vec3& t);
  static Pose from_axis_angle(const Vec3& axis, double angle, const Vec3& t);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation_); }

  Vec3 operator*(const Vec3& p) const { return rotation_ * p + translation_; }
  Pose operator*(const Pose& other) const {
    return Pose(rotation_ * other.rotation_,
                rotation_ * other.translation_ + translation_);
  }
  Pose inverse() const {
    const Mat3 rt = rotation_.transpose();
    return Pose(rt, -(rt * translation_));
  }

  /// Magnitude of the rotation in radians, in [0, pi].
  double rotation_angle() const;

  bool is_valid(double tol = 1e-6) const;

  bool operator==(const Pose& other) const {
    return rotation_ == other.rotation_ && translation_ == other.translation_;
  }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

inline Vec3 transform(const Pose& pose, const Vec3& p) { return pose * p; }
inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose inverse(const Pose& pose) { return pose.inverse(); }

/// Throws kInvalidProjection for points with z <= 0.
Vec2 project(const Vec3& p, const Intrinsics& k);
/// Throws kInvalidDepth for z <= 0.
Vec3 unproject(const Vec2& px, double z, const Intrinsics& k);

/// Non-throwing projection used in the hot loops; nullopt behind the camera.
inline std::optional<Vec2> try_project(const Vec3& p, const Intrinsics& k) {
  if (!(p.z() > 0.0)) return std::nullopt;
  return Vec2(k.cx + k.fx * p.x() / p.z(), k.cy + k.fy * p.y() / p.z());
}
inline Vec3 unproject_unchecked(double u, double v, double z, const Intrinsics& k) {
  return Vec3((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
}

/// Euler angles (intrinsic Z-Y-X: yaw, pitch, roll) plus translation.
struct PoseVector {
  Vec3 euler = Vec3::Zero();  // (yaw, pitch, roll)
  Vec3 trans = Vec3::Zero();
};

/// Pitch is taken in [-pi/2, pi/2]; at gimbal lock roll is set to zero.
PoseVector to_pose_vector(const Pose& pose);
Pose from_pose_vector(const PoseVector& v);

/// Elementwise scale applied to (euler, trans) before norming.
using PoseScale = std::array<double, 6>;
inline constexpr PoseScale kDefaultPoseScale = {2.0, 2.0, 2.0, 1.0, 1.0, 1.0};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// ||s .* (v(a) - v(b))|| with Euler differences wrapped into (-pi, pi].
double pose_distance(const Pose& a, const Pose& b,
                     const PoseScale& scale = kDefaultPoseScale);

}  // namespace kfrecon

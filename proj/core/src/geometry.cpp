#include "kfrecon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "kfrecon/error.hpp"

namespace kfrecon {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kInvalidProjection: return "invalid projection";
    case ErrorCode::kInvalidDepth: return "invalid depth";
    case ErrorCode::kUndefinedOverlap: return "undefined overlap";
    case ErrorCode::kStreamingContract: return "streaming contract violated";
    case ErrorCode::kInconsistentDeintegration: return "inconsistent de-integration";
    case ErrorCode::kMalformedEvent: return "malformed event";
    case ErrorCode::kDegenerateMesh: return "degenerate mesh";
    case ErrorCode::kEmptyInput: return "empty input";
    case ErrorCode::kIncompleteModel: return "incomplete model";
    case ErrorCode::kIncompleteTrajectory: return "incomplete trajectory";
    case ErrorCode::kIngestion: return "ingestion error";
    case ErrorCode::kFormat: return "format error";
  }
  return "unknown";
}

void Intrinsics::validate() const {
  if (!(fx > 0.0 && fy > 0.0) || width <= 0 || height <= 0 || !(cx >= 0.0) ||
      !(cx < width) || !(cy >= 0.0) || !(cy < height)) {
    std::ostringstream msg;
    msg << "bad intrinsics: fx=" << fx << " fy=" << fy << " cx=" << cx << " cy=" << cy
        << " size=" << width << "x" << height;
    throw Error(ErrorCode::kInvalidArgument, msg.str());
  }
}

Intrinsics Intrinsics::downscaled(int factor) const {
  Intrinsics k = *this;
  k.fx = fx / factor;
  k.fy = fy / factor;
  k.width = width / factor;
  k.height = height / factor;
  k.cx = (cx + 0.5) / factor - 0.5;
  k.cy = (cy + 0.5) / factor - 0.5;
  return k;
}

Pose Pose::from_quaternion(const Eigen::Quaterniond& q, const Vec3& t) {
  return Pose(q.normalized().toRotationMatrix(), t);
}

Pose Pose::from_axis_angle(const Vec3& axis, double angle, const Vec3& t) {
  return Pose(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix(), t);
}

double Pose::rotation_angle() const {
  return Eigen::AngleAxisd(rotation_).angle();
}

bool Pose::is_valid(double tol) const {
  if (!rotation_.allFinite() || !translation_.allFinite()) return false;
  const double ortho = (rotation_.transpose() * rotation_ - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation_.determinant() - 1.0) <= tol;
}

Vec2 project(const Vec3& p, const Intrinsics& k) {
  if (!(p.z() > 0.0)) {
    throw Error(ErrorCode::kInvalidProjection, "cannot project point with z <= 0");
  }
  return Vec2(k.cx + k.fx * p.x() / p.z(), k.cy + k.fy * p.y() / p.z());
}

Vec3 unproject(const Vec2& px, double z, const Intrinsics& k) {
  if (!(z > 0.0)) throw Error(ErrorCode::kInvalidDepth, "cannot unproject depth <= 0");
  return unproject_unchecked(px.x(), px.y(), z, k);
}

PoseVector to_pose_vector(const Pose& pose) {
  const Mat3& r = pose.rotation();
  PoseVector v;
  v.trans = pose.translation();
  const double s = std::clamp(-r(2, 0), -1.0, 1.0);
  const double pitch = std::asin(s);
  double yaw = 0.0;
  double roll = 0.0;
  if (std::abs(s) < 1.0 - 1e-12) {
    yaw = std::atan2(r(1, 0), r(0, 0));
    roll = std::atan2(r(2, 1), r(2, 2));
  } else {
    yaw = std::atan2(-r(0, 1), r(1, 1));
  }
  v.euler = Vec3(yaw, pitch, roll);
  return v;
}

Pose from_pose_vector(const PoseVector& v) {
  const Mat3 r = (Eigen::AngleAxisd(v.euler.x(), Vec3::UnitZ()) *
                  Eigen::AngleAxisd(v.euler.y(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(v.euler.z(), Vec3::UnitX()))
                     .toRotationMatrix();
  return Pose(r, v.trans);
}

double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, kTwoPi);
  if (w <= -std::numbers::pi) w += kTwoPi;
  return w;
}

double pose_distance(const Pose& a, const Pose& b, const PoseScale& scale) {
  const PoseVector va = to_pose_vector(a);
  const PoseVector vb = to_pose_vector(b);
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = scale[i] * wrap_angle(va.euler[i] - vb.euler[i]);
    sum += d * d;
  }
  for (int i = 0; i < 3; ++i) {
    const double d = scale[3 + i] * (va.trans[i] - vb.trans[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

}  // namespace kfrecon

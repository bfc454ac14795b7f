#include "kfrecon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "kfrecon/dataset.hpp"
#include "kfrecon/error.hpp"
#include "kfrecon/png_io.hpp"

namespace kfrecon {

namespace {

double box_sdf(const Vec3& p, const Vec3& center, const Vec3& half) {
  const Vec3 q = (p - center).cwiseAbs() - half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

Vec3 sample_box_surface(const Vec3& center, const Vec3& h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
  const double pick = uniform(rng) * (areas[0] + areas[1] + areas[2]);
  const int axis = pick < areas[0] ? 0 : (pick < areas[0] + areas[1] ? 1 : 2);
  Vec3 p;
  for (int i = 0; i < 3; ++i) p[i] = (2.0 * uniform(rng) - 1.0) * h[i];
  p[axis] = uniform(rng) < 0.5 ? -h[axis] : h[axis];
  return center + p;
}

// Rotation and translation of `err` scaled along the geodesic from identity.
Pose scale_error(const Pose& err, double s) {
  const Eigen::AngleAxisd aa(err.rotation());
  return Pose(Eigen::AngleAxisd(aa.angle() * s, aa.axis()).toRotationMatrix(),
              err.translation() * s);
}

Pose interpolate(const Pose& a, const Pose& b, double alpha) {
  const Eigen::Quaterniond qa(a.rotation());
  const Eigen::Quaterniond qb(b.rotation());
  return Pose(qa.slerp(alpha, qb).normalized().toRotationMatrix(),
              (1.0 - alpha) * a.translation() + alpha * b.translation());
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(normal(rng), normal(rng), normal(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

}  // namespace

double Primitive::sdf(const Vec3& p) const {
  switch (kind) {
    case Kind::kRoomShell:
      return -box_sdf(p, center, half_extents);
    case Kind::kSphere:
      return (p - center).norm() - radius;
    case Kind::kBox:
      return box_sdf(p, center, half_extents);
  }
  return std::numeric_limits<double>::infinity();
}

double Primitive::surface_area() const {
  if (kind == Kind::kSphere) return 4.0 * std::numbers::pi * radius * radius;
  const Vec3& h = half_extents;
  return 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
}

AnalyticScene AnalyticScene::desk_room() {
  std::vector<Primitive> p;
  Primitive room;
  room.kind = Primitive::Kind::kRoomShell;
  room.half_extents = Vec3(1.5, 1.2, 1.5);
  room.albedo = {185.0, 175.0, 160.0};
  room.checker_size = 0.25;
  p.push_back(room);

  Primitive table;
  table.kind = Primitive::Kind::kBox;
  table.center = Vec3(0.9, 0.85, 0.0);
  table.half_extents = Vec3(0.35, 0.35, 0.5);
  table.albedo = {150.0, 100.0, 60.0};
  p.push_back(table);

  Primitive ball;
  ball.kind = Primitive::Kind::kSphere;
  ball.center = Vec3(0.9, 0.35, 0.1);
  ball.radius = 0.15;
  ball.albedo = {210.0, 60.0, 60.0};
  p.push_back(ball);

  Primitive globe;
  globe.kind = Primitive::Kind::kSphere;
  globe.center = Vec3(-0.8, 0.9, -0.8);
  globe.radius = 0.3;
  globe.albedo = {60.0, 170.0, 90.0};
  p.push_back(globe);

  Primitive pillar;
  pillar.kind = Primitive::Kind::kBox;
  pillar.center = Vec3(-1.2, 0.0, 0.9);
  pillar.half_extents = Vec3(0.12, 1.2, 0.12);
  pillar.albedo = {90.0, 110.0, 200.0};
  p.push_back(pillar);
  return AnalyticScene(std::move(p));
}

double AnalyticScene::sdf(const Vec3& p) const {
  double d = std::numeric_limits<double>::infinity();
  for (const Primitive& prim : primitives_) d = std::min(d, prim.sdf(p));
  return d;
}

Vec3 AnalyticScene::normal(const Vec3& p) const {
  constexpr double h = 1e-6;
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Zero();
    e[i] = h;
    g[i] = sdf(p + e) - sdf(p - e);
  }
  const double n = g.norm();
  return n > 0.0 ? Vec3(g / n) : Vec3::UnitZ();
}

const Primitive& AnalyticScene::closest(const Vec3& p) const {
  if (primitives_.empty()) throw Error(ErrorCode::kInvalidArgument, "scene has no primitives");
  return *std::min_element(primitives_.begin(), primitives_.end(),
                           [&](const Primitive& a, const Primitive& b) {
                             return a.sdf(p) < b.sdf(p);
                           });
}

RgbD AnalyticScene::albedo(const Vec3& p) const {
  const Primitive& prim = closest(p);
  RgbD c = prim.albedo;
  if (prim.checker_size > 0.0) {
    const long long parity = static_cast<long long>(std::floor(p.x() / prim.checker_size)) +
                             static_cast<long long>(std::floor(p.y() / prim.checker_size)) +
                             static_cast<long long>(std::floor(p.z() / prim.checker_size));
    if (parity % 2 != 0) {
      for (double& v : c) v *= 0.7;
    }
  }
  return c;
}

PointCloud AnalyticScene::sample_surface(std::size_t n, std::uint64_t seed) const {
  if (primitives_.empty()) throw Error(ErrorCode::kEmptyInput, "scene has no primitives");
  std::vector<double> cdf;
  double total = 0.0;
  for (const Primitive& prim : primitives_) cdf.push_back(total += prim.surface_area());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  PointCloud out;
  out.reserve(n);
  const std::size_t max_tries = 1000 * std::max<std::size_t>(n, 1);
  for (std::size_t tries = 0; out.size() < n && tries < max_tries; ++tries) {
    const std::size_t which = std::min<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), uniform(rng) * total) - cdf.begin(),
        primitives_.size() - 1);
    const Primitive& prim = primitives_[which];
    const Vec3 p = prim.kind == Primitive::Kind::kSphere
                       ? Vec3(prim.center + prim.radius * random_unit(rng))
                       : sample_box_surface(prim.center, prim.half_extents, rng);
    bool exposed = true;
    for (std::size_t j = 0; j < primitives_.size() && exposed; ++j) {
      // Touching another primitive counts as buried.
      if (j != which && primitives_[j].sdf(p) < 1e-6) exposed = false;
    }
    if (exposed) out.push_back(p);
  }
  if (out.size() < n) throw Error(ErrorCode::kDegenerateMesh, "scene has no exposed surface");
  return out;
}

namespace {

struct Hit {
  bool valid = false;
  double z = 0.0;
  Vec3 point = Vec3::Zero();
};

Hit trace(const AnalyticScene& scene, const Pose& pose, const Intrinsics& k, int u, int v,
          const RenderParams& params) {
  const Vec3 ray_cam = Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalized();
  const Vec3 dir = pose.rotation() * ray_cam;
  const Vec3& origin = pose.translation();
  const double t_max = params.max_depth / ray_cam.z();
  double t = 0.0;
  for (int step = 0; step < params.max_steps; ++step) {
    const Vec3 p = origin + t * dir;
    const double d = scene.sdf(p);
    if (d < params.hit_epsilon) return Hit{true, t * ray_cam.z(), p};
    t += d;
    if (t > t_max) break;
  }
  return {};
}

}  // namespace

RenderedFrame render(const AnalyticScene& scene, const Pose& pose, const Intrinsics& k,
                     const RenderParams& params) {
  k.validate();
  RenderedFrame out{DepthMap(k.width, k.height, 0.0), ColorImage(k.width, k.height, Rgb8{0, 0, 0})};
  const Vec3 light = params.light_direction.normalized();
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Hit hit = trace(scene, pose, k, u, v, params);
      if (!hit.valid || hit.z > params.max_depth) continue;
      out.depth(u, v) = hit.z;
      const double shade =
          params.ambient + (1.0 - params.ambient) * std::max(0.0, scene.normal(hit.point).dot(light));
      const RgbD a = scene.albedo(hit.point);
      Rgb8& c = out.color(u, v);
      for (int ch = 0; ch < 3; ++ch) {
        c[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(a[ch] * shade), 0L, 255L));
      }
    }
  }
  return out;
}

DepthMap render_depth(const AnalyticScene& scene, const Pose& pose, const Intrinsics& k,
                      const RenderParams& params) {
  k.validate();
  DepthMap depth(k.width, k.height, 0.0);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Hit hit = trace(scene, pose, k, u, v, params);
      if (hit.valid && hit.z <= params.max_depth) depth(u, v) = hit.z;
    }
  }
  return depth;
}

DepthMap add_noise(const DepthMap& depth, double sigma0, std::uint64_t seed) {
  if (sigma0 <= 0.0) return depth;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  DepthMap out = depth;
  for (int v = 0; v < out.height(); ++v) {
    for (int u = 0; u < out.width(); ++u) {
      double& z = out(u, v);
      if (z <= 0.0) continue;
      const double noisy = z + normal(rng) * sigma0 * z * z;
      z = noisy > 0.0 ? noisy : 0.0;
    }
  }
  return out;
}

void TrajectorySpec::validate() const {
  if (waypoints.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two waypoints");
  if (frames_per_segment < 1) throw Error(ErrorCode::kInvalidArgument, "frames_per_segment < 1");
  if (drift_translation < 0.0 || drift_rotation < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "drift rates must be non-negative");
  }
  if (anchor_interval < 1) throw Error(ErrorCode::kInvalidArgument, "anchor_interval < 1");
  if (noise_sigma0 < 0.0 || blur_max_sigma < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "noise and blur must be non-negative");
  }
  int previous = 0;
  for (const ScheduledCorrection& c : schedule) {
    if (c.frame <= previous) {
      throw Error(ErrorCode::kInvalidArgument, "correction frames must increase from 1");
    }
    if (!(c.fraction >= 0.0 && c.fraction <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "correction fraction outside [0, 1]");
    }
    previous = c.frame;
  }
  for (const Pose& p : waypoints) {
    if (!p.is_valid()) throw Error(ErrorCode::kInvalidArgument, "waypoint is not a rigid transform");
  }
}

std::vector<Pose> orbit_waypoints(const Vec3& center, double radius, int count, double sway) {
  if (count < 2) throw Error(ErrorCode::kInvalidArgument, "orbit needs at least two waypoints");
  std::vector<Pose> out;
  for (int j = 0; j < count; ++j) {
    const double theta = 2.0 * std::numbers::pi * j / count;
    const double heading = theta + sway * std::sin(3.0 * theta);
    const Vec3 z(std::cos(heading), 0.0, std::sin(heading));
    const Vec3 y = Vec3::UnitY();
    Mat3 r;
    r.col(0) = y.cross(z);
    r.col(1) = y;
    r.col(2) = z;
    out.emplace_back(r, center + radius * Vec3(std::cos(theta), 0.0, std::sin(theta)));
  }
  out.push_back(out.front());
  return out;
}

SyntheticSequence::SyntheticSequence(AnalyticScene scene, const TrajectorySpec& spec,
                                     const Intrinsics& k, RenderParams render)
    : scene_(std::move(scene)), spec_(spec), render_(render) {
  spec_.validate();
  k.validate();
  info_.intrinsics = k;
  const int segments = static_cast<int>(spec_.waypoints.size()) - 1;
  const int n = segments * spec_.frames_per_segment;

  std::mt19937_64 rng(spec_.seed);
  const Vec3 drift_dir = random_unit(rng);
  const Vec3 drift_axis = random_unit(rng);
  const Pose step = Pose::from_axis_angle(drift_axis, spec_.drift_rotation,
                                          spec_.drift_translation * drift_dir);
  const bool drifting = spec_.drift_rotation > 0.0 || spec_.drift_translation > 0.0;

  Pose err = Pose::identity();
  std::map<int, Pose> anchor_err;
  auto schedule = spec_.schedule.begin();
  for (int i = 1; i <= n; ++i) {
    const double u = n > 1 ? static_cast<double>(i - 1) * segments / (n - 1) : 0.0;
    const int seg = std::min(static_cast<int>(std::floor(u)), segments - 1);
    const Pose gt = interpolate(spec_.waypoints[seg], spec_.waypoints[seg + 1], u - seg);

    if (i > 1 && drifting) err = err * step;
    for (; schedule != spec_.schedule.end() && schedule->frame <= i; ++schedule) {
      const double keep = 1.0 - schedule->fraction;
      PoseUpdateEvent ev;
      ev.at_frame = schedule->frame;
      for (auto& [frame, e] : anchor_err) {
        e = scale_error(e, keep);
        ev.anchor_poses[frame] = e * ground_truth_[frame - 1];
      }
      err = scale_error(err, keep);
      info_.events.push_back(std::move(ev));
    }
    const Pose drifted = err * gt;
    ground_truth_.push_back(gt);
    drifted_.push_back(drifted);
    info_.frame_indices.push_back(i);
    info_.poses[i] = drifted;
    info_.ground_truth[i] = gt;
    if (is_anchor_frame(i, spec_.anchor_interval)) {
      anchor_err[i] = err;
      info_.dvo_keyframes.push_back(i);
    }
  }
  for (; schedule != spec_.schedule.end(); ++schedule) {
    // Events past the last frame still apply to every declared anchor.
    PoseUpdateEvent ev;
    ev.at_frame = schedule->frame;
    for (auto& [frame, e] : anchor_err) {
      e = scale_error(e, 1.0 - schedule->fraction);
      ev.anchor_poses[frame] = e * ground_truth_[frame - 1];
    }
    info_.events.push_back(std::move(ev));
  }
}

FrameObservation SyntheticSequence::render_frame(std::size_t i, const Pose& carried) const {
  if (i >= ground_truth_.size()) throw Error(ErrorCode::kInvalidArgument, "frame out of range");
  const int index = info_.frame_indices[i];
  RenderedFrame r = render(scene_, ground_truth_[i], info_.intrinsics, render_);
  const std::uint64_t frame_seed = spec_.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(index);
  FrameObservation f;
  f.index = index;
  f.depth = add_noise(r.depth, spec_.noise_sigma0, frame_seed);
  if (spec_.blur_max_sigma > 0.0) {
    std::mt19937_64 rng(frame_seed ^ 0xB1A2ULL);
    const double sigma = std::uniform_real_distribution<double>(0.0, spec_.blur_max_sigma)(rng);
    f.color = sigma > 0.05 ? gaussian_blur(r.color, sigma) : r.color;
  } else {
    f.color = std::move(r.color);
  }
  f.pose = carried;
  return f;
}

FrameObservation SyntheticSequence::load(std::size_t i) const {
  if (i >= drifted_.size()) throw Error(ErrorCode::kInvalidArgument, "frame out of range");
  return render_frame(i, drifted_[i]);
}

FrameObservation SyntheticSequence::load_ground_truth(std::size_t i) const {
  if (i >= ground_truth_.size()) throw Error(ErrorCode::kInvalidArgument, "frame out of range");
  return render_frame(i, ground_truth_[i]);
}

void write_dataset(const FrameSource& source, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const SequenceInfo& info = source.info();
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "color");
  write_intrinsics(dir / "intrinsics.txt", info.intrinsics);
  for (std::size_t i = 0; i < source.size(); ++i) {
    const FrameObservation f = source.load(i);
    const std::string name = frame_file_name(f.index);
    write_depth_png(dir / "depth" / name, f.depth, kDepthScale);
    write_color_png(dir / "color" / name, f.color);
  }
  write_trajectory(dir / "trajectory.txt", info.poses);
  if (!info.ground_truth.empty()) write_trajectory(dir / "groundtruth.txt", info.ground_truth);
  if (!info.events.empty()) write_events(dir / "events.jsonl", info.events);
  if (!info.dvo_keyframes.empty()) {
    std::ofstream out(dir / "dvo_keyframes.txt");
    for (int f : info.dvo_keyframes) out << f << '\n';
    if (!out) throw Error(ErrorCode::kFormat, "cannot write " + (dir / "dvo_keyframes.txt").string());
  }
}

}  // namespace kfrecon

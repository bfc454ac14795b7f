#include "kfrecon/keyframe_fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kfrecon/error.hpp"

namespace kfrecon {
namespace {

int round_pixel(double v) { return static_cast<int>(std::lround(v)); }

// Frame camera -> keyframe camera. Exact identity when both poses agree so
// a keyframe's own first frame lands on itself bit for bit.
Pose relative(const Pose& keyframe_pose, const Pose& frame_pose) {
  if (keyframe_pose == frame_pose) return Pose::identity();
  return keyframe_pose.inverse() * frame_pose;
}

// Crete et al. style blur estimate along one axis: fraction of gradient
// energy that survives a strong 9-tap box re-blur. nullopt without edges.
std::optional<double> directional_blur(const GrayImage& f, bool vertical) {
  const int w = f.width();
  const int h = f.height();
  constexpr int kRadius = 4;
  GrayImage b(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -kRadius; i <= kRadius; ++i) {
        acc += vertical ? f(x, std::clamp(y + i, 0, h - 1)) : f(std::clamp(x + i, 0, w - 1), y);
      }
      b(x, y) = acc / (2 * kRadius + 1);
    }
  }
  double sum_f = 0.0;
  double sum_v = 0.0;
  for (int y = vertical ? 1 : 0; y < h; ++y) {
    for (int x = vertical ? 0 : 1; x < w; ++x) {
      const int px = vertical ? x : x - 1;
      const int py = vertical ? y - 1 : y;
      const double df = std::abs(f(x, y) - f(px, py));
      const double db = std::abs(b(x, y) - b(px, py));
      sum_f += df;
      sum_v += std::max(0.0, df - db);
    }
  }
  if (sum_f <= 0.0) return std::nullopt;
  return (sum_f - sum_v) / sum_f;
}

}  // namespace

Keyframe Keyframe::open(int id, const Intrinsics& k, const Pose& pose, int anchor_id,
                        const Pose& anchor_pose) {
  Keyframe kf;
  kf.id = id;
  kf.depth = DepthMap(k.width, k.height, 0.0);
  kf.weight = Image<double>(k.width, k.height, 0.0);
  kf.color = Image<RgbD>(k.width, k.height, RgbD{0.0, 0.0, 0.0});
  kf.has_color = Mask(k.width, k.height, 0);
  kf.pose = pose;
  kf.anchor_id = anchor_id;
  kf.rel_pose = anchor_pose.inverse() * pose;
  return kf;
}

std::size_t Keyframe::valid_pixel_count() const {
  return static_cast<std::size_t>(
      std::count_if(weight.data().begin(), weight.data().end(), [](double w) { return w > 0.0; }));
}

Image<Vec3> compute_normals(const DepthMap& depth, const Intrinsics& k) {
  Image<Vec3> normals(depth.width(), depth.height(), Vec3::Zero());
  for (int y = 1; y + 1 < depth.height(); ++y) {
    for (int x = 1; x + 1 < depth.width(); ++x) {
      const double zl = depth(x - 1, y), zr = depth(x + 1, y);
      const double zu = depth(x, y - 1), zd = depth(x, y + 1);
      if (depth(x, y) <= 0.0 || zl <= 0.0 || zr <= 0.0 || zu <= 0.0 || zd <= 0.0) continue;
      const Vec3 dx = unproject_unchecked(x + 1, y, zr, k) - unproject_unchecked(x - 1, y, zl, k);
      const Vec3 dy = unproject_unchecked(x, y + 1, zd, k) - unproject_unchecked(x, y - 1, zu, k);
      const Vec3 n = dy.cross(dx);
      const double len = n.norm();
      if (len > 0.0) normals(x, y) = n / len;
    }
  }
  return normals;
}

double depth_sample_weight(double z, const Vec3& normal, const Vec3& ray_dir) {
  if (!(z > 0.0)) return 0.0;
  const double cos_theta = -normal.dot(ray_dir);
  if (cos_theta <= 0.0) return 0.0;
  return cos_theta / (z * z);
}

Image<double> depth_weights(const DepthMap& depth, const Intrinsics& k) {
  const Image<Vec3> normals = compute_normals(depth, k);
  Image<double> weights(depth.width(), depth.height(), 0.0);
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      const double z = depth(x, y);
      if (z <= 0.0) continue;
      const Vec3 ray = unproject_unchecked(x, y, 1.0, k).normalized();
      weights(x, y) = depth_sample_weight(z, normals(x, y), ray);
    }
  }
  return weights;
}

Mask discontinuity_mask(const DepthMap& depth, double threshold) {
  const int w = depth.width();
  const int h = depth.height();
  Mask mask(w, h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double z = depth(x, y);
      if (z <= 0.0) {
        mask(x, y) = 1;
        continue;
      }
      bool discard = false;
      for (int dy = -1; dy <= 1 && !discard; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if ((dx == 0 && dy == 0) || !depth.in_bounds(x + dx, y + dy)) continue;
          const double zn = depth(x + dx, y + dy);
          if (zn <= 0.0 || std::abs(zn - z) > threshold) {
            discard = true;
            break;
          }
        }
      }
      mask(x, y) = discard ? 1 : 0;
    }
  }
  return mask;
}

void fuse_depth(Keyframe& kf, const FrameObservation& frame, const Intrinsics& k,
                const FusionParams& params) {
  if (frame.depth.width() != k.width || frame.depth.height() != k.height) {
    throw Error(ErrorCode::kInvalidArgument, "frame size does not match intrinsics");
  }
  if (kf.depth.width() != k.width || kf.depth.height() != k.height) {
    throw Error(ErrorCode::kInvalidArgument, "keyframe size does not match intrinsics");
  }
  const Mask mask = discontinuity_mask(frame.depth, params.discontinuity_threshold);
  Image<double> weights = depth_weights(frame.depth, k);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      if (mask(x, y)) {
        weights(x, y) = 0.0;
      } else if (params.max_range > 0.0 &&
                 unproject_unchecked(x, y, frame.depth(x, y), k).norm() > params.max_range) {
        weights(x, y) = 0.0;
      }
    }
  }

  const Pose rel = relative(kf.pose, frame.pose);
  const bool identity = rel == Pose::identity();
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const double w = weights(x, y);
      if (w <= 0.0) continue;
      const double z = frame.depth(x, y);
      int u = x;
      int v = y;
      double zk = z;
      if (!identity) {
        const Vec3 p = rel * unproject_unchecked(x, y, z, k);
        if (!(p.z() > 0.0)) continue;
        u = round_pixel(k.cx + k.fx * p.x() / p.z());
        v = round_pixel(k.cy + k.fy * p.y() / p.z());
        if (!kf.depth.in_bounds(u, v)) continue;
        zk = p.z();
      }
      double& fused = kf.depth(u, v);
      double& fused_w = kf.weight(u, v);
      fused = fused_w > 0.0 ? (fused_w * fused + w * zk) / (fused_w + w) : zk;
      fused_w += w;
    }
  }
  kf.members.push_back(frame.index);

  if (params.collect_color) {
    MemberObservation obs;
    obs.index = frame.index;
    obs.relative_pose = rel;
    obs.sharpness = sharpness(to_gray(frame.color));
    obs.color = unsharp_mask(frame.color, params.unsharp_sigma, params.unsharp_gain);
    obs.depth = frame.depth;
    obs.weight = std::move(weights);
    kf.observations.push_back(std::move(obs));
  }
}

double sharpness(const GrayImage& image) {
  if (image.empty()) throw Error(ErrorCode::kInvalidArgument, "sharpness of empty image");
  const auto vertical = directional_blur(image, true);
  const auto horizontal = directional_blur(image, false);
  if (!vertical && !horizontal) return 1.0;
  const double blur = std::max(vertical.value_or(0.0), horizontal.value_or(0.0));
  return std::clamp(1.0 - blur, 0.0, 1.0);
}

ColorImage unsharp_mask(const ColorImage& image, double sigma, double gain) {
  ColorImage out(image.width(), image.height());
  if (image.empty()) return out;
  for (int ch = 0; ch < 3; ++ch) {
    GrayImage plane(image.width(), image.height());
    for (std::size_t i = 0; i < image.size(); ++i) plane.data()[i] = image.data()[i][ch];
    const GrayImage blurred = gaussian_blur(plane, sigma);
    for (std::size_t i = 0; i < image.size(); ++i) {
      const double in = plane.data()[i];
      const double v = in + gain * (in - blurred.data()[i]);
      out.data()[i][ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

double weighted_median(std::span<WeightedSample> samples) {
  if (samples.empty()) throw Error(ErrorCode::kInvalidArgument, "weighted median of nothing");
  std::stable_sort(samples.begin(), samples.end(),
                   [](const WeightedSample& a, const WeightedSample& b) { return a.value < b.value; });
  double total = 0.0;
  for (const auto& s : samples) total += s.weight;
  if (!(total > 0.0)) throw Error(ErrorCode::kInvalidArgument, "weighted median without mass");
  double cumulative = 0.0;
  for (const auto& s : samples) {
    cumulative += s.weight;
    if (2.0 * cumulative >= total) return s.value;
  }
  return samples.back().value;
}

void fuse_color(Keyframe& kf, const Intrinsics& k, const FusionParams& params) {
  struct View {
    const MemberObservation* obs;
    Pose keyframe_to_member;
  };
  std::vector<View> views;
  views.reserve(kf.observations.size());
  for (const auto& obs : kf.observations) {
    views.push_back({&obs, obs.relative_pose.inverse()});
  }

  std::array<std::vector<WeightedSample>, 3> channels;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      kf.has_color(x, y) = 0;
      kf.color(x, y) = RgbD{kNeutralGray, kNeutralGray, kNeutralGray};
      if (kf.weight(x, y) <= 0.0) continue;
      const Vec3 p = unproject_unchecked(x, y, kf.depth(x, y), k);
      for (auto& c : channels) c.clear();
      for (const View& view : views) {
        const Vec3 q = view.keyframe_to_member * p;
        const auto px = try_project(q, k);
        if (!px || !k.contains(*px)) continue;
        const int iu = round_pixel(px->x());
        const int iv = round_pixel(px->y());
        const double d = view.obs->depth(iu, iv);
        if (d <= 0.0 || std::abs(d - q.z()) > params.occlusion_tolerance) continue;
        const double w = view.obs->sharpness * view.obs->weight(iu, iv);
        if (w <= 0.0) continue;
        const RgbD c = sample_bilinear(view.obs->color, px->x(), px->y());
        for (int ch = 0; ch < 3; ++ch) channels[ch].push_back({c[ch], w});
      }
      if (channels[0].empty()) continue;
      RgbD fused{};
      for (int ch = 0; ch < 3; ++ch) fused[ch] = weighted_median(channels[ch]);
      kf.color(x, y) = fused;
      kf.has_color(x, y) = 1;
    }
  }
  kf.observations.clear();
  kf.observations.shrink_to_fit();
  kf.color_finalized = true;
}

double overlap_ratio(const Keyframe& kf, const FrameObservation& frame, const Intrinsics& k,
                     const FusionParams& params) {
  const Pose to_frame = relative(frame.pose, kf.pose);
  std::size_t valid = 0;
  std::size_t visible = 0;
  for (int y = 0; y < kf.depth.height(); ++y) {
    for (int x = 0; x < kf.depth.width(); ++x) {
      if (kf.weight(x, y) <= 0.0) continue;
      ++valid;
      const Vec3 q = to_frame * unproject_unchecked(x, y, kf.depth(x, y), k);
      if (!(q.z() > 0.0)) continue;
      const int u = round_pixel(k.cx + k.fx * q.x() / q.z());
      const int v = round_pixel(k.cy + k.fy * q.y() / q.z());
      if (!frame.depth.in_bounds(u, v)) continue;
      const double d = frame.depth(u, v);
      if (d > 0.0 && std::abs(d - q.z()) <= params.occlusion_tolerance) ++visible;
    }
  }
  if (valid == 0) throw Error(ErrorCode::kUndefinedOverlap, "keyframe has no valid depth");
  return static_cast<double>(visible) / static_cast<double>(valid);
}

void KeyframeStrategy::validate() const {
  if (kappa < 1) throw Error(ErrorCode::kInvalidArgument, "kappa must be >= 1");
  if (!(max_rotation > 0.0) || !(max_translation > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "distance thresholds must be positive");
  }
  if (!(overlap_min > 0.0 && overlap_min < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "overlap_min must lie in (0, 1)");
  }
}

bool keyframe_decision(const KeyframeStrategy& strategy, const Keyframe& kf,
                       const FrameObservation& frame, const std::vector<bool>& dvo_flags,
                       const Intrinsics& k, const FusionParams& params) {
  if (kf.empty()) return false;
  switch (strategy.kind) {
    case KeyframeStrategyKind::kConst:
      return static_cast<int>(kf.members.size()) >= strategy.kappa;
    case KeyframeStrategyKind::kDvo:
      return frame.index >= 0 && static_cast<std::size_t>(frame.index) < dvo_flags.size() &&
             dvo_flags[frame.index];
    case KeyframeStrategyKind::kDist: {
      const Pose rel = kf.pose.inverse() * frame.pose;
      return rel.rotation_angle() > strategy.max_rotation ||
             rel.translation().norm() > strategy.max_translation;
    }
    case KeyframeStrategyKind::kOverlap:
      if (kf.valid_pixel_count() == 0) return true;
      return overlap_ratio(kf, frame, k, params) < strategy.overlap_min;
  }
  return false;
}

}  // namespace kfrecon

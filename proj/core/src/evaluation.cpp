#include "kfrecon/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "kfrecon/error.hpp"

namespace kfrecon {

PointCloud sample_mesh(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.triangles.empty()) throw Error(ErrorCode::kEmptyInput, "cannot sample an empty mesh");
  std::vector<double> cdf(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    const Vec3& a = mesh.vertices[t[0]];
    total += 0.5 * (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).norm();
    cdf[i] = total;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kDegenerateMesh, "mesh has zero surface area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  PointCloud out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double pick = uniform(rng) * total;
    const std::size_t tri = std::min<std::size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), pick) - cdf.begin(), cdf.size() - 1);
    const auto& t = mesh.triangles[tri];
    const double r1 = std::sqrt(uniform(rng));
    const double r2 = uniform(rng);
    out.push_back((1.0 - r1) * mesh.vertices[t[0]] + r1 * (1.0 - r2) * mesh.vertices[t[1]] +
                  r1 * r2 * mesh.vertices[t[2]]);
  }
  return out;
}

NearestNeighborGrid::NearestNeighborGrid(std::span<const Vec3> points, double cell_size)
    : cell_size_(cell_size) {
  if (points.empty()) throw Error(ErrorCode::kEmptyInput, "nearest-neighbor index over no points");
  if (!(cell_size > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cell size must be positive");
  Vec3 lo = points.front();
  Vec3 hi = points.front();
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  // Keep the dense cell array bounded; exactness does not depend on the cell size.
  constexpr double kMaxCells = 1 << 24;
  const Vec3 extent = hi - lo;
  while ((extent / cell_size_ + Vec3::Ones()).prod() > kMaxCells) cell_size_ *= 2.0;
  origin_ = lo;
  for (int i = 0; i < 3; ++i) dims_[i] = static_cast<int>(std::floor(extent[i] / cell_size_)) + 1;

  const std::size_t cells = static_cast<std::size_t>(dims_.x()) * dims_.y() * dims_.z();
  std::vector<std::uint32_t> counts(cells + 1, 0);
  std::vector<std::size_t> cell_ids(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    cell_ids[i] = flat(cell_of(points[i]));
    ++counts[cell_ids[i] + 1];
  }
  for (std::size_t c = 0; c < cells; ++c) counts[c + 1] += counts[c];
  cell_start_ = counts;
  points_.resize(points.size());
  original_index_.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::uint32_t slot = counts[cell_ids[i]]++;
    points_[slot] = points[i];
    original_index_[slot] = static_cast<std::uint32_t>(i);
  }
}

NearestNeighborGrid::Cell NearestNeighborGrid::cell_of(const Vec3& p) const {
  const Vec3 rel = (p - origin_) / cell_size_;
  return Cell(static_cast<int>(std::floor(rel.x())), static_cast<int>(std::floor(rel.y())),
              static_cast<int>(std::floor(rel.z())));
}

std::size_t NearestNeighborGrid::flat(const Cell& c) const {
  return (static_cast<std::size_t>(c.z()) * dims_.y() + c.y()) * dims_.x() + c.x();
}

NearestNeighborGrid::Match NearestNeighborGrid::nearest(const Vec3& query) const {
  const Vec3 rel = (query - origin_) / cell_size_;
  // Query cell, clamped into int range; it may lie outside the grid.
  Eigen::Matrix<long long, 3, 1> c;
  for (int i = 0; i < 3; ++i) {
    c[i] = static_cast<long long>(std::clamp(std::floor(rel[i]), -1e12, 1e12));
  }
  long long first_ring = 0;
  for (int i = 0; i < 3; ++i) {
    if (c[i] < 0) first_ring = std::max(first_ring, -c[i]);
    if (c[i] >= dims_[i]) first_ring = std::max(first_ring, c[i] - dims_[i] + 1);
  }

  Match best{0, std::numeric_limits<double>::infinity()};
  auto scan_cell = [&](long long x, long long y, long long z) {
    const std::size_t id = flat(Cell(static_cast<int>(x), static_cast<int>(y), static_cast<int>(z)));
    for (std::uint32_t s = cell_start_[id]; s < cell_start_[id + 1]; ++s) {
      const double d2 = (points_[s] - query).squaredNorm();
      if (d2 < best.squared_distance ||
          (d2 == best.squared_distance && original_index_[s] < best.index)) {
        best = Match{original_index_[s], d2};
      }
    }
  };

  for (long long r = first_ring;; ++r) {
    if (r > 0 && best.squared_distance < std::numeric_limits<double>::infinity()) {
      // Anything in ring r or beyond lies outside the cube of rings < r.
      double bound = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 3; ++i) {
        const double lo = origin_[i] + (c[i] - r + 1) * cell_size_;
        const double hi = origin_[i] + (c[i] + r) * cell_size_;
        bound = std::min({bound, query[i] - lo, hi - query[i]});
      }
      if (bound > 0.0 && bound * bound > best.squared_distance) break;
    }
    const long long x0 = std::max(c.x() - r, 0LL), x1 = std::min(c.x() + r, dims_.x() - 1LL);
    const long long y0 = std::max(c.y() - r, 0LL), y1 = std::min(c.y() + r, dims_.y() - 1LL);
    const long long z0 = std::max(c.z() - r, 0LL), z1 = std::min(c.z() + r, dims_.z() - 1LL);
    for (long long x = x0; x <= x1; ++x) {
      for (long long y = y0; y <= y1; ++y) {
        const bool on_shell = std::llabs(x - c.x()) == r || std::llabs(y - c.y()) == r;
        if (on_shell) {
          for (long long z = z0; z <= z1; ++z) scan_cell(x, y, z);
        } else {
          if (c.z() - r >= 0 && c.z() - r < dims_.z()) scan_cell(x, y, c.z() - r);
          if (r > 0 && c.z() + r >= 0 && c.z() + r < dims_.z()) scan_cell(x, y, c.z() + r);
        }
      }
    }
    const bool covers_grid = c.x() - r <= 0 && c.y() - r <= 0 && c.z() - r <= 0 &&
                             c.x() + r >= dims_.x() - 1 && c.y() + r >= dims_.y() - 1 &&
                             c.z() + r >= dims_.z() - 1;
    if (covers_grid) break;
  }
  return best;
}

std::vector<double> nearest_distances(std::span<const Vec3> queries, std::span<const Vec3> targets,
                                      double cell_size) {
  const NearestNeighborGrid grid(targets, cell_size);
  std::vector<double> out;
  out.reserve(queries.size());
  for (const Vec3& q : queries) out.push_back(std::sqrt(grid.nearest(q).squared_distance));
  return out;
}

namespace {

double mean_mm(const std::vector<double>& d) {
  double sum = 0.0;
  for (double v : d) sum += v;
  return 1000.0 * sum / static_cast<double>(d.size());
}

}  // namespace

double mad_correctness(const TriangleMesh& model, const PointCloud& reference, double cell_size) {
  if (model.vertices.empty() || reference.empty()) {
    throw Error(ErrorCode::kEmptyInput, "correctness needs a model and a reference");
  }
  return mean_mm(nearest_distances(model.vertices, reference, cell_size));
}

double mad_completeness(const TriangleMesh& model, const PointCloud& reference, double cell_size) {
  if (model.vertices.empty()) {
    throw Error(ErrorCode::kIncompleteModel, "model is empty; completeness is unbounded");
  }
  if (reference.empty()) throw Error(ErrorCode::kEmptyInput, "completeness needs a reference");
  return mean_mm(nearest_distances(reference, model.vertices, cell_size));
}

Rgb8 distance_color(double distance_mm, double max_mm) {
  const double t = std::clamp(distance_mm / max_mm, 0.0, 1.0);
  // Jet-style ramp: blue -> cyan -> green -> yellow -> red.
  auto ramp = [&](double center) { return std::clamp(1.5 - std::abs(4.0 * t - center), 0.0, 1.0); };
  const auto byte = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
  return Rgb8{byte(ramp(3.0)), byte(ramp(2.0)), byte(ramp(1.0))};
}

void write_distance_ply(const std::filesystem::path& path, const TriangleMesh& mesh,
                        std::span<const double> distances_mm) {
  if (distances_mm.size() != mesh.vertices.size()) {
    throw Error(ErrorCode::kInvalidArgument, "one distance per vertex required");
  }
  TriangleMesh colored = mesh;
  colored.colors.resize(mesh.vertices.size());
  for (std::size_t i = 0; i < distances_mm.size(); ++i) {
    const Rgb8 c = distance_color(distances_mm[i]);
    colored.colors[i] = RgbD{double(c[0]), double(c[1]), double(c[2])};
  }
  write_ply(path, colored);
}

TriangleMesh build_reference(std::span<const FrameObservation> frames,
                             const std::map<int, Pose>& ground_truth, const Intrinsics& k,
                             const VolumeConfig& cfg, const FusionParams& fusion) {
  if (frames.empty()) throw Error(ErrorCode::kEmptyInput, "reference needs at least one frame");
  for (const FrameObservation& f : frames) {
    if (ground_truth.count(f.index) == 0) {
      throw Error(ErrorCode::kIncompleteTrajectory,
                  "no ground-truth pose for frame " + std::to_string(f.index));
    }
  }
  FusionParams params = fusion;
  if (params.max_range <= 0.0) params.max_range = cfg.safe_range();
  TwoTierStore store(cfg);
  int id = 0;
  for (const FrameObservation& f : frames) {
    const Pose& gt = ground_truth.at(f.index);
    FrameObservation at_gt = f;
    at_gt.pose = gt;
    Keyframe kf = Keyframe::open(id++, k, gt, 0, Pose::identity());
    fuse_depth(kf, at_gt, k, params);
    fuse_color(kf, k, params);
    store.stream(gt.translation());
    integrate(store, kf, gt, k);
  }
  return marching_cubes(store);
}

}  // namespace kfrecon

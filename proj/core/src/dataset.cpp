#include "kfrecon/dataset.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

#include "kfrecon/error.hpp"
#include "kfrecon/png_io.hpp"

namespace kfrecon {

namespace fs = std::filesystem;

namespace {

constexpr double kQuaternionTolerance = 1e-3;

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIngestion, "cannot open " + path.string());
  return in;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kFormat, "cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

bool skip_line(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

Pose pose_from_values(const double* v, const std::string& where) {
  Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
  const double norm = q.norm();
  if (!std::isfinite(norm) || std::abs(norm - 1.0) > kQuaternionTolerance) {
    throw Error(ErrorCode::kIngestion, where + ": quaternion is not unit length");
  }
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(v[i])) throw Error(ErrorCode::kIngestion, where + ": non-finite translation");
  }
  return Pose::from_quaternion(q.normalized(), Vec3(v[0], v[1], v[2]));
}

void write_pose_values(std::ostream& out, const Pose& p) {
  const Eigen::Quaterniond q(p.rotation());
  const Vec3& t = p.translation();
  out << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z()
      << ' ' << q.w();
}

}  // namespace

std::string frame_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

std::map<int, Pose> read_trajectory(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::map<int, Pose> poses;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (skip_line(line)) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::istringstream fields(line);
    int index = 0;
    double v[7];
    if (!(fields >> index)) throw Error(ErrorCode::kIngestion, where + ": expected frame index");
    for (double& x : v) {
      if (!(fields >> x)) throw Error(ErrorCode::kIngestion, where + ": expected 7 pose values");
    }
    std::string rest;
    if (fields >> rest) throw Error(ErrorCode::kIngestion, where + ": trailing fields");
    if (!poses.emplace(index, pose_from_values(v, where)).second) {
      throw Error(ErrorCode::kIngestion, where + ": duplicate frame index");
    }
  }
  return poses;
}

void write_trajectory(const fs::path& path, const std::map<int, Pose>& poses) {
  std::ofstream out = open_output(path);
  out << "# index tx ty tz qx qy qz qw\n";
  for (const auto& [index, pose] : poses) {
    out << index << ' ';
    write_pose_values(out, pose);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kFormat, "cannot write " + path.string());
}

std::vector<PoseUpdateEvent> parse_events(std::istream& in, const std::string& origin) {
  std::vector<PoseUpdateEvent> events;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (skip_line(line)) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      PoseUpdateEvent ev;
      ev.at_frame = j.at("at_frame").get<int>();
      if (j.contains("anchors")) {
        for (const auto& [key, value] : j.at("anchors").items()) {
          const auto values = value.get<std::vector<double>>();
          if (values.size() != 7) {
            throw Error(ErrorCode::kIngestion, where + ": anchor " + key + " needs 7 values");
          }
          std::size_t used = 0;
          const int id = std::stoi(key, &used);
          if (used != key.size()) throw Error(ErrorCode::kIngestion, where + ": bad anchor id " + key);
          ev.anchor_poses[id] = pose_from_values(values.data(), where);
        }
      }
      if (j.contains("new_dvo_keyframes")) {
        ev.new_dvo_keyframes = j.at("new_dvo_keyframes").get<std::vector<int>>();
      }
      if (!events.empty() && ev.at_frame < events.back().at_frame) {
        throw Error(ErrorCode::kIngestion, where + ": events out of frame order");
      }
      events.push_back(std::move(ev));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kIngestion, where + ": " + e.what());
    }
  }
  return events;
}

std::vector<PoseUpdateEvent> read_events(const fs::path& path) {
  std::ifstream in = open_input(path);
  return parse_events(in, path.string());
}

void write_events(const fs::path& path, const std::vector<PoseUpdateEvent>& events) {
  std::ofstream out = open_output(path);
  for (const PoseUpdateEvent& ev : events) {
    nlohmann::json j;
    j["at_frame"] = ev.at_frame;
    nlohmann::json anchors = nlohmann::json::object();
    for (const auto& [id, pose] : ev.anchor_poses) {
      const Eigen::Quaterniond q(pose.rotation());
      const Vec3& t = pose.translation();
      anchors[std::to_string(id)] = {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()};
    }
    j["anchors"] = anchors;
    j["new_dvo_keyframes"] = ev.new_dvo_keyframes;
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::kFormat, "cannot write " + path.string());
}

Intrinsics read_intrinsics(const fs::path& path) {
  std::ifstream in = open_input(path);
  std::string line;
  while (std::getline(in, line)) {
    if (skip_line(line)) continue;
    std::istringstream fields(line);
    Intrinsics k;
    if (!(fields >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
      throw Error(ErrorCode::kIngestion, path.string() + ": expected fx fy cx cy width height");
    }
    try {
      k.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::kIngestion, path.string() + ": " + e.what());
    }
    return k;
  }
  throw Error(ErrorCode::kIngestion, path.string() + ": no intrinsics line");
}

void write_intrinsics(const fs::path& path, const Intrinsics& k) {
  std::ofstream out = open_output(path);
  out << "# fx fy cx cy width height\n"
      << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << ' ' << k.width << ' ' << k.height
      << '\n';
  if (!out) throw Error(ErrorCode::kFormat, "cannot write " + path.string());
}

DiskDataset::DiskDataset(fs::path root) : root_(std::move(root)) {
  if (!fs::is_directory(root_)) {
    throw Error(ErrorCode::kIngestion, root_.string() + ": dataset directory not found");
  }
  info_.intrinsics = read_intrinsics(root_ / "intrinsics.txt");
  info_.poses = read_trajectory(root_ / "trajectory.txt");
  if (info_.poses.empty()) {
    throw Error(ErrorCode::kIngestion, (root_ / "trajectory.txt").string() + ": no frames");
  }
  for (const auto& [index, pose] : info_.poses) {
    for (const char* sub : {"depth", "color"}) {
      const fs::path file = root_ / sub / frame_file_name(index);
      if (!fs::is_regular_file(file)) {
        throw Error(ErrorCode::kIngestion, file.string() + ": missing frame image");
      }
    }
    info_.frame_indices.push_back(index);
  }
  if (fs::exists(root_ / "groundtruth.txt")) {
    info_.ground_truth = read_trajectory(root_ / "groundtruth.txt");
  }
  if (fs::exists(root_ / "events.jsonl")) info_.events = read_events(root_ / "events.jsonl");
  const fs::path kf_file = root_ / "dvo_keyframes.txt";
  if (fs::exists(kf_file)) {
    std::ifstream in = open_input(kf_file);
    std::string line;
    for (int line_no = 1; std::getline(in, line); ++line_no) {
      if (skip_line(line)) continue;
      std::istringstream fields(line);
      int index = 0;
      if (!(fields >> index)) {
        throw Error(ErrorCode::kIngestion,
                    kf_file.string() + ":" + std::to_string(line_no) + ": expected frame index");
      }
      info_.dvo_keyframes.push_back(index);
    }
    std::sort(info_.dvo_keyframes.begin(), info_.dvo_keyframes.end());
  }
}

FrameObservation DiskDataset::load(std::size_t i) const {
  if (i >= info_.frame_indices.size()) {
    throw Error(ErrorCode::kInvalidArgument, "frame out of range");
  }
  FrameObservation f;
  f.index = info_.frame_indices[i];
  const std::string name = frame_file_name(f.index);
  f.depth = read_depth_png(root_ / "depth" / name, kDepthScale);
  f.color = read_color_png(root_ / "color" / name);
  const Intrinsics& k = info_.intrinsics;
  for (const auto& [sub, w, h] : {std::tuple{"depth", f.depth.width(), f.depth.height()},
                                  std::tuple{"color", f.color.width(), f.color.height()}}) {
    if (w != k.width || h != k.height) {
      throw Error(ErrorCode::kIngestion, (root_ / sub / name).string() +
                                             ": image size does not match intrinsics");
    }
  }
  f.pose = info_.poses.at(f.index);
  return f;
}

}  // namespace kfrecon

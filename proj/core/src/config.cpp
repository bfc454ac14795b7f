#include "kfrecon/config.hpp"

#include <charconv>
#include <fstream>

#include "kfrecon/error.hpp"

namespace kfrecon {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw Error(ErrorCode::kInvalidArgument, "bad value '" + value + "' for " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw Error(ErrorCode::kInvalidArgument, "bad boolean '" + value + "' for " + key);
}

}  // namespace

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open config " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "strategy") {
    cfg.strategy.kind = parse_strategy(value);
  } else if (key == "kappa") {
    cfg.strategy.kappa = parse_number<int>(key, value);
  } else if (key == "m") {
    cfg.window = parse_number<std::size_t>(key, value);
  } else if (key == "mode") {
    cfg.mode = parse_reintegration_mode(value);
  } else if (key == "voxel_size") {
    cfg.volume.voxel_size = parse_number<double>(key, value);
  } else if (key == "truncation") {
    cfg.volume.truncation = parse_number<double>(key, value);
  } else if (key == "stream_radius") {
    cfg.volume.stream_radius = parse_number<double>(key, value);
  } else if (key == "hash_buckets") {
    cfg.volume.hash_buckets = parse_number<std::size_t>(key, value);
  } else if (key == "max_rotation") {
    cfg.strategy.max_rotation = parse_number<double>(key, value);
  } else if (key == "max_translation") {
    cfg.strategy.max_translation = parse_number<double>(key, value);
  } else if (key == "overlap_min") {
    cfg.strategy.overlap_min = parse_number<double>(key, value);
  } else if (key == "discontinuity_threshold") {
    cfg.fusion.discontinuity_threshold = parse_number<double>(key, value);
  } else if (key == "occlusion_tolerance") {
    cfg.fusion.occlusion_tolerance = parse_number<double>(key, value);
  } else if (key == "unsharp_sigma") {
    cfg.fusion.unsharp_sigma = parse_number<double>(key, value);
  } else if (key == "unsharp_gain") {
    cfg.fusion.unsharp_gain = parse_number<double>(key, value);
  } else if (key == "anchor_interval") {
    cfg.anchor_interval = parse_number<int>(key, value);
  } else if (key == "final_pass") {
    cfg.final_pass = parse_bool(key, value);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
  }
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  for (const auto& [key, value] : read_key_values(path)) apply_setting(base, key, value);
  base.validate();
  return base;
}

}  // namespace kfrecon

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kfrecon/evaluation.hpp"
#include "kfrecon/frame_source.hpp"
#include "kfrecon/keyframe_fusion.hpp"
#include "kfrecon/meshing.hpp"
#include "kfrecon/reintegration.hpp"
#include "kfrecon/sdf_volume.hpp"

namespace kfrecon {

enum class ReintegrationMode { kConsecutiveWindow, kTopK, kOff };

struct RunConfig {
  KeyframeStrategy strategy;
  std::size_t window = 10;  // m
  VolumeConfig volume;
  FusionParams fusion;
  ReintegrationMode mode = ReintegrationMode::kConsecutiveWindow;
  /// SLAM keyframe spacing assumed when the dataset lists none.
  int anchor_interval = 10;
  /// Run the final pass after the stream ends (ignored in kOff mode).
  bool final_pass = true;

  void validate() const;
};

struct FrameStats {
  int frame = 0;
  double fuse_ms = 0.0;
  double integrate_ms = 0.0;
  double correct_ms = 0.0;
  std::uint64_t blocks_in = 0;
  std::uint64_t blocks_out = 0;
  std::uint64_t relocations = 0;
};

struct RunStats {
  std::vector<FrameStats> frames;
  StreamCounters counters;
  std::size_t keyframes = 0;
  std::size_t corrected_entries = 0;  // on the fly
  std::size_t finalized_entries = 0;  // final pass
  std::size_t events = 0;
  double final_pass_ms = 0.0;
  double meshing_ms = 0.0;
  std::size_t retained_pixels = 0;  // fused keyframe pixels held in memory
  std::size_t valid_pixels = 0;

  double total_fuse_ms() const;
  double total_integrate_ms() const;
  double total_correct_ms() const;
  /// Integration + on-the-fly correction + final pass.
  double total_volume_ms() const;
};

struct RunResult {
  TriangleMesh mesh;
  RunStats stats;
  TwoTierStore volume;
  KeyframeCatalog keyframes;
  IntegrationLedger ledger;
};

/// Frame -> keyframe fusion -> integrate -> pose updates -> correction ->
/// final pass -> mesh.
RunResult reconstruct(const FrameSource& source, const RunConfig& cfg);

/// Fresh volume holding every ledger keyframe integrated at its target pose.
TwoTierStore rebuild_volume(const RunResult& run, const Intrinsics& k, const VolumeConfig& cfg);

struct VolumeDifference {
  double max_sdf = 0.0;
  double max_weight = 0.0;
  double max_color = 0.0;
};
/// Voxelwise comparison over the union of both volumes; a missing block
/// equals an unobserved one.
VolumeDifference compare_volumes(const TwoTierStore& a, const TwoTierStore& b);

void write_stats_csv(const std::filesystem::path& path, const RunStats& stats);

struct BenchCase {
  int kappa = 20;
  std::size_t window = 10;
  ReintegrationMode mode = ReintegrationMode::kConsecutiveWindow;
};

struct BenchRow {
  BenchCase config;
  std::size_t keyframes = 0;
  double integrate_ms = 0.0;
  double correct_ms = 0.0;
  double final_pass_ms = 0.0;
  double volume_ms = 0.0;
  StreamCounters counters;
  std::optional<double> corr_mm;
  std::optional<double> compl_mm;
};

/// Runs every case against the same source; metrics when a reference is
/// given.
std::vector<BenchRow> run_bench(const FrameSource& source, const RunConfig& base,
                                const std::vector<BenchCase>& cases,
                                const PointCloud* reference = nullptr);
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

std::string to_string(ReintegrationMode mode);
ReintegrationMode parse_reintegration_mode(const std::string& s);
std::string to_string(KeyframeStrategyKind kind);
KeyframeStrategyKind parse_strategy(const std::string& s);

}  // namespace kfrecon

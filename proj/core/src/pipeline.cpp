#include "kfrecon/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>

#include "kfrecon/error.hpp"
#include "kfrecon/synth.hpp"

namespace kfrecon {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::vector<bool> anchor_flags(const SequenceInfo& info, int interval) {
  const int last = info.frame_indices.empty() ? 0 : info.frame_indices.back();
  std::vector<bool> flags(static_cast<std::size_t>(std::max(last, 0)) + 1, false);
  if (!info.dvo_keyframes.empty()) {
    for (int f : info.dvo_keyframes) {
      if (f >= 0 && f <= last) flags[f] = true;
    }
  } else {
    for (int f : info.frame_indices) flags[f] = is_anchor_frame(f, interval);
  }
  return flags;
}

}  // namespace

void RunConfig::validate() const {
  strategy.validate();
  volume.validate();
  if (window < 1) throw Error(ErrorCode::kInvalidArgument, "window size m must be >= 1");
  if (anchor_interval < 1) throw Error(ErrorCode::kInvalidArgument, "anchor_interval must be >= 1");
  if (!(volume.safe_range() > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "stream_radius too small for truncation and block size");
  }
}

double RunStats::total_fuse_ms() const {
  double s = 0.0;
  for (const FrameStats& f : frames) s += f.fuse_ms;
  return s;
}

double RunStats::total_integrate_ms() const {
  double s = 0.0;
  for (const FrameStats& f : frames) s += f.integrate_ms;
  return s;
}

double RunStats::total_correct_ms() const {
  double s = 0.0;
  for (const FrameStats& f : frames) s += f.correct_ms;
  return s;
}

double RunStats::total_volume_ms() const {
  return total_integrate_ms() + total_correct_ms() + final_pass_ms;
}

RunResult reconstruct(const FrameSource& source, const RunConfig& cfg) {
  cfg.validate();
  const SequenceInfo& info = source.info();
  const Intrinsics& k = info.intrinsics;
  k.validate();
  if (source.size() == 0) throw Error(ErrorCode::kEmptyInput, "sequence has no frames");

  FusionParams fusion = cfg.fusion;
  fusion.max_range = fusion.max_range > 0.0 ? std::min(fusion.max_range, cfg.volume.safe_range())
                                            : cfg.volume.safe_range();

  RunResult run{TriangleMesh{}, RunStats{}, TwoTierStore(cfg.volume), KeyframeCatalog{},
                IntegrationLedger{}};
  CorrectionContext ctx{run.volume, run.ledger, run.keyframes, k};
  std::vector<bool> flags = anchor_flags(info, cfg.anchor_interval);
  auto next_event = info.events.begin();
  std::optional<Keyframe> open;
  int next_id = 0;
  int latest_anchor = -1;

  auto close_keyframe = [&](FrameStats& fs) {
    Keyframe& kf = *open;
    auto t = Clock::now();
    fuse_color(kf, k, fusion);
    fs.fuse_ms += elapsed_ms(t);
    t = Clock::now();
    const LedgerEntry& entry = run.ledger.append(kf.id, kf.anchor_id, kf.rel_pose);
    run.volume.stream(entry.integrated_pose.translation());
    integrate(run.volume, kf, entry.integrated_pose, k);
    fs.integrate_ms += elapsed_ms(t);
    run.stats.retained_pixels += kf.retained_pixel_count();
    run.stats.valid_pixels += kf.valid_pixel_count();
    const int id = kf.id;
    run.keyframes.emplace(id, std::move(kf));
    open.reset();
  };

  for (std::size_t i = 0; i < source.size(); ++i) {
    FrameObservation frame = source.load(i);
    FrameStats fs;
    fs.frame = frame.index;
    const StreamCounters before = run.volume.counters();

    // Each pose update triggers at most one correction.
    auto t = Clock::now();
    for (; next_event != info.events.end() && next_event->at_frame <= frame.index; ++next_event) {
      run.ledger.apply_pose_update(*next_event);
      ++run.stats.events;
      for (int f : next_event->new_dvo_keyframes) {
        if (f >= 0 && static_cast<std::size_t>(f) < flags.size()) flags[f] = true;
      }
      if (open) open->reanchor(run.ledger.anchor_pose(open->anchor_id));
      if (cfg.mode == ReintegrationMode::kOff || run.ledger.empty()) continue;
      const Vec3 resume = frame.pose.translation();
      if (cfg.mode == ReintegrationMode::kConsecutiveWindow) {
        if (const auto start = select_window(run.ledger, cfg.window)) {
          run.stats.corrected_entries += correct_window(ctx, *start, cfg.window, resume).entries.size();
        }
      } else {
        std::vector<std::size_t> picks = select_topk(run.ledger, cfg.window);
        const std::vector<double> moved = run.ledger.displacements();
        std::erase_if(picks, [&](std::size_t e) { return moved[e] < kMoveEpsilon; });
        if (!picks.empty()) {
          run.stats.corrected_entries += correct_individually(ctx, picks, resume).entries.size();
        }
      }
    }
    fs.correct_ms = elapsed_ms(t);

    // The first frame anchors the map even when the backend never names it.
    if (flags[frame.index] || latest_anchor < 0) {
      if (!run.ledger.has_anchor(frame.index)) run.ledger.declare_anchor(frame.index, frame.pose);
      latest_anchor = frame.index;
    }

    t = Clock::now();
    const bool boundary = open && keyframe_decision(cfg.strategy, *open, frame, flags, k, fusion);
    fs.fuse_ms += elapsed_ms(t);
    if (boundary) close_keyframe(fs);
    t = Clock::now();
    if (!open) {
      open = Keyframe::open(next_id++, k, frame.pose, latest_anchor,
                            run.ledger.anchor_pose(latest_anchor));
    }
    fuse_depth(*open, frame, k, fusion);
    fs.fuse_ms += elapsed_ms(t);

    const StreamCounters delta = run.volume.counters() - before;
    fs.blocks_in = delta.blocks_streamed_in;
    fs.blocks_out = delta.blocks_streamed_out;
    fs.relocations = delta.sphere_relocations;
    run.stats.frames.push_back(fs);
  }

  if (open) {
    FrameStats tail;
    tail.frame = run.stats.frames.back().frame;
    close_keyframe(tail);
    FrameStats& last = run.stats.frames.back();
    last.fuse_ms += tail.fuse_ms;
    last.integrate_ms += tail.integrate_ms;
  }
  // Events scheduled after the last frame still reach the ledger.
  for (; next_event != info.events.end(); ++next_event) {
    run.ledger.apply_pose_update(*next_event);
    ++run.stats.events;
  }

  if (cfg.mode != ReintegrationMode::kOff && cfg.final_pass) {
    const auto t = Clock::now();
    run.stats.finalized_entries = finalize(ctx, cfg.window);
    run.stats.final_pass_ms = elapsed_ms(t);
  }
  run.volume.garbage_collect();
  const auto t = Clock::now();
  run.mesh = marching_cubes(run.volume);
  run.stats.meshing_ms = elapsed_ms(t);
  run.stats.keyframes = run.keyframes.size();
  run.stats.counters = run.volume.counters();
  return run;
}

TwoTierStore rebuild_volume(const RunResult& run, const Intrinsics& k, const VolumeConfig& cfg) {
  TwoTierStore store(cfg);
  for (const LedgerEntry& e : run.ledger.entries()) {
    const auto kf = run.keyframes.find(e.keyframe_id);
    if (kf == run.keyframes.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "ledger references unknown keyframe " + std::to_string(e.keyframe_id));
    }
    store.stream(e.target_pose.translation());
    integrate(store, kf->second, e.target_pose, k);
  }
  store.garbage_collect();
  return store;
}

VolumeDifference compare_volumes(const TwoTierStore& a, const TwoTierStore& b) {
  std::vector<BlockCoord> coords = a.sorted_coords();
  const std::vector<BlockCoord> other = b.sorted_coords();
  coords.insert(coords.end(), other.begin(), other.end());
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());

  static const VoxelBlock kEmpty{};
  VolumeDifference diff;
  for (const BlockCoord& c : coords) {
    const VoxelBlock* pa = a.find(c);
    const VoxelBlock* pb = b.find(c);
    const VoxelBlock& ba = pa != nullptr ? *pa : kEmpty;
    const VoxelBlock& bb = pb != nullptr ? *pb : kEmpty;
    for (int v = 0; v < kVoxelsPerBlock; ++v) {
      const Voxel& x = ba.voxels[v];
      const Voxel& y = bb.voxels[v];
      diff.max_weight = std::max(diff.max_weight, std::abs(x.weight - y.weight));
      if (x.observed() != y.observed()) {
        diff.max_sdf = std::max(diff.max_sdf, std::abs(x.sdf - y.sdf));
        diff.max_color = std::max(diff.max_color, 255.0);
        continue;
      }
      if (!x.observed()) continue;
      diff.max_sdf = std::max(diff.max_sdf, std::abs(x.sdf - y.sdf));
      for (int ch = 0; ch < 3; ++ch) {
        diff.max_color = std::max(diff.max_color, std::abs(x.color[ch] - y.color[ch]));
      }
    }
  }
  return diff;
}

void write_stats_csv(const std::filesystem::path& path, const RunStats& stats) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kFormat, "cannot write " + path.string());
  out << "frame,fuse_ms,integrate_ms,correct_ms,blocks_in,blocks_out,relocations\n";
  for (const FrameStats& f : stats.frames) {
    out << f.frame << ',' << f.fuse_ms << ',' << f.integrate_ms << ',' << f.correct_ms << ','
        << f.blocks_in << ',' << f.blocks_out << ',' << f.relocations << '\n';
  }
  if (!out) throw Error(ErrorCode::kFormat, "cannot write " + path.string());
}

std::vector<BenchRow> run_bench(const FrameSource& source, const RunConfig& base,
                                const std::vector<BenchCase>& cases,
                                const PointCloud* reference) {
  if (cases.empty()) throw Error(ErrorCode::kInvalidArgument, "bench needs at least one case");
  std::vector<BenchRow> rows;
  for (const BenchCase& c : cases) {
    RunConfig cfg = base;
    cfg.strategy.kind = KeyframeStrategyKind::kConst;
    cfg.strategy.kappa = c.kappa;
    cfg.window = c.window;
    cfg.mode = c.mode;
    const RunResult run = reconstruct(source, cfg);
    BenchRow row;
    row.config = c;
    row.keyframes = run.stats.keyframes;
    row.integrate_ms = run.stats.total_integrate_ms();
    row.correct_ms = run.stats.total_correct_ms();
    row.final_pass_ms = run.stats.final_pass_ms;
    row.volume_ms = run.stats.total_volume_ms();
    row.counters = run.stats.counters;
    if (reference != nullptr && !reference->empty() && !run.mesh.empty()) {
      const double cell = 4.0 * cfg.volume.voxel_size;
      row.corr_mm = mad_correctness(run.mesh, *reference, cell);
      row.compl_mm = mad_completeness(run.mesh, *reference, cell);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "kappa,m,mode,keyframes,integrate_ms,correct_ms,final_pass_ms,volume_ms,"
         "blocks_in,blocks_out,relocations,corr_mm,compl_mm\n";
  for (const BenchRow& r : rows) {
    out << r.config.kappa << ',' << r.config.window << ',' << to_string(r.config.mode) << ','
        << r.keyframes << ',' << r.integrate_ms << ',' << r.correct_ms << ',' << r.final_pass_ms
        << ',' << r.volume_ms << ',' << r.counters.blocks_streamed_in << ','
        << r.counters.blocks_streamed_out << ',' << r.counters.sphere_relocations << ',';
    if (r.corr_mm) out << *r.corr_mm;
    out << ',';
    if (r.compl_mm) out << *r.compl_mm;
    out << '\n';
  }
}

std::string to_string(ReintegrationMode mode) {
  switch (mode) {
    case ReintegrationMode::kConsecutiveWindow:
      return "consecutive_window";
    case ReintegrationMode::kTopK:
      return "topk_baseline";
    case ReintegrationMode::kOff:
      return "off";
  }
  return "unknown";
}

ReintegrationMode parse_reintegration_mode(const std::string& s) {
  if (s == "consecutive_window" || s == "window") return ReintegrationMode::kConsecutiveWindow;
  if (s == "topk_baseline" || s == "topk") return ReintegrationMode::kTopK;
  if (s == "off") return ReintegrationMode::kOff;
  throw Error(ErrorCode::kInvalidArgument, "unknown reintegration mode '" + s + "'");
}

std::string to_string(KeyframeStrategyKind kind) {
  switch (kind) {
    case KeyframeStrategyKind::kConst:
      return "KF_CONST";
    case KeyframeStrategyKind::kDvo:
      return "KF_DVO";
    case KeyframeStrategyKind::kDist:
      return "KF_DIST";
    case KeyframeStrategyKind::kOverlap:
      return "KF_OVRLP";
  }
  return "unknown";
}

KeyframeStrategyKind parse_strategy(const std::string& s) {
  if (s == "KF_CONST" || s == "const") return KeyframeStrategyKind::kConst;
  if (s == "KF_DVO" || s == "dvo") return KeyframeStrategyKind::kDvo;
  if (s == "KF_DIST" || s == "dist") return KeyframeStrategyKind::kDist;
  if (s == "KF_OVRLP" || s == "overlap") return KeyframeStrategyKind::kOverlap;
  throw Error(ErrorCode::kInvalidArgument, "unknown keyframe strategy '" + s + "'");
}

}  // namespace kfrecon

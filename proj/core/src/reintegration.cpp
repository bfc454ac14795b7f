#include "kfrecon/reintegration.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "kfrecon/error.hpp"

namespace kfrecon {

void IntegrationLedger::declare_anchor(int id, const Pose& pose) { anchors_[id] = pose; }

const Pose& IntegrationLedger::anchor_pose(int id) const {
  auto it = anchors_.find(id);
  if (it == anchors_.end()) {
    throw Error(ErrorCode::kMalformedEvent, "unknown anchor " + std::to_string(id));
  }
  return it->second;
}

LedgerEntry& IntegrationLedger::append(int keyframe_id, int anchor_id, const Pose& rel_pose) {
  const Pose pose = anchor_pose(anchor_id) * rel_pose;
  entries_.push_back(LedgerEntry{keyframe_id, pose, pose, anchor_id, rel_pose});
  return entries_.back();
}

std::size_t IntegrationLedger::apply_pose_update(const PoseUpdateEvent& ev) {
  for (const auto& [id, pose] : ev.anchor_poses) {
    const bool declared_here =
        std::find(ev.new_dvo_keyframes.begin(), ev.new_dvo_keyframes.end(), id) !=
        ev.new_dvo_keyframes.end();
    if (!has_anchor(id) && !declared_here) {
      throw Error(ErrorCode::kMalformedEvent,
                  "event at frame " + std::to_string(ev.at_frame) + " updates unknown anchor " +
                      std::to_string(id));
    }
    if (!pose.is_valid(1e-6)) {
      throw Error(ErrorCode::kMalformedEvent,
                  "event at frame " + std::to_string(ev.at_frame) + " carries an invalid pose");
    }
  }
  for (const auto& [id, pose] : ev.anchor_poses) anchors_[id] = pose;

  std::size_t changed = 0;
  for (LedgerEntry& e : entries_) {
    auto it = ev.anchor_poses.find(e.anchor_id);
    if (it == ev.anchor_poses.end()) continue;
    const Pose target = it->second * e.rel_pose;
    if (!(target == e.target_pose)) ++changed;
    e.target_pose = target;
  }
  return changed;
}

std::vector<double> IntegrationLedger::displacements(const PoseScale& scale) const {
  std::vector<double> out;
  out.reserve(entries_.size());
  for (const LedgerEntry& e : entries_) {
    out.push_back(pose_distance(e.integrated_pose, e.target_pose, scale));
  }
  return out;
}

std::optional<std::size_t> select_window(const IntegrationLedger& ledger, std::size_t m,
                                         const PoseScale& scale) {
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "window size must be >= 1");
  if (ledger.empty()) return std::nullopt;
  const std::vector<double> dist = ledger.displacements(scale);
  const std::size_t len = std::min(m, dist.size());
  std::size_t best_start = 0;
  double best_sum = -1.0;
  for (std::size_t j = 0; j + len <= dist.size(); ++j) {
    double sum = 0.0;
    for (std::size_t i = j; i < j + len; ++i) sum += dist[i];
    if (sum > best_sum) {
      best_sum = sum;
      best_start = j;
    }
  }
  if (best_sum < kMoveEpsilon) return std::nullopt;
  return best_start;
}

std::vector<std::size_t> select_topk(const IntegrationLedger& ledger, std::size_t m,
                                     const PoseScale& scale) {
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "selection size must be >= 1");
  const std::vector<double> dist = ledger.displacements(scale);
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  order.resize(std::min(m, order.size()));
  return order;
}

namespace {

Vec3 camera_center(const Pose& pose) { return pose.translation(); }

const Keyframe& keyframe_for(const CorrectionContext& ctx, const LedgerEntry& e) {
  auto it = ctx.keyframes.find(e.keyframe_id);
  if (it == ctx.keyframes.end()) {
    throw Error(ErrorCode::kInvalidArgument,
                "ledger references missing keyframe " + std::to_string(e.keyframe_id));
  }
  return it->second;
}

}  // namespace

CorrectionRecord correct_entries(CorrectionContext ctx, std::span<const std::size_t> entries,
                                 const std::optional<Vec3>& resume_at) {
  CorrectionRecord record;
  record.entries.assign(entries.begin(), entries.end());
  if (entries.empty()) return record;
  for (std::size_t i : entries) {
    if (i >= ctx.ledger.size()) throw Error(ErrorCode::kInvalidArgument, "entry out of range");
  }
  const StreamCounters before = ctx.store.counters();

  ctx.store.stream(camera_center(ctx.ledger[entries.front()].integrated_pose));
  for (std::size_t n = 0; n < entries.size(); ++n) {
    const LedgerEntry& e = ctx.ledger[entries[n]];
    ctx.store.stream(camera_center(e.integrated_pose));
    try {
      deintegrate(ctx.store, keyframe_for(ctx, e), e.integrated_pose, ctx.intrinsics);
    } catch (const Error&) {
      // Put back what was already removed, newest first.
      for (std::size_t r = n; r-- > 0;) {
        const LedgerEntry& done = ctx.ledger[entries[r]];
        ctx.store.stream(camera_center(done.integrated_pose));
        integrate(ctx.store, keyframe_for(ctx, done), done.integrated_pose, ctx.intrinsics);
      }
      throw;
    }
  }

  ctx.store.stream(camera_center(ctx.ledger[entries.front()].target_pose));
  for (std::size_t i : entries) {
    LedgerEntry& e = ctx.ledger[i];
    ctx.store.stream(camera_center(e.target_pose));
    integrate(ctx.store, keyframe_for(ctx, e), e.target_pose, ctx.intrinsics);
    e.integrated_pose = e.target_pose;
  }

  if (resume_at) ctx.store.stream(*resume_at);
  record.streaming = ctx.store.counters() - before;
  return record;
}

CorrectionRecord correct_window(CorrectionContext ctx, std::size_t start, std::size_t m,
                                const std::optional<Vec3>& resume_at) {
  if (start >= ctx.ledger.size()) throw Error(ErrorCode::kInvalidArgument, "window start out of range");
  const std::size_t end = std::min(start + m, ctx.ledger.size());
  std::vector<std::size_t> window(end - start);
  std::iota(window.begin(), window.end(), start);
  return correct_entries(ctx, window, resume_at);
}

CorrectionRecord correct_individually(CorrectionContext ctx, std::span<const std::size_t> picks,
                                      const std::optional<Vec3>& resume_at) {
  CorrectionRecord record;
  const StreamCounters before = ctx.store.counters();
  for (std::size_t i : picks) {
    const std::size_t one[] = {i};
    correct_entries(ctx, one);
    record.entries.push_back(i);
  }
  if (resume_at) ctx.store.stream(*resume_at);
  record.streaming = ctx.store.counters() - before;
  return record;
}

std::size_t finalize(CorrectionContext ctx, std::size_t m, const PoseScale& scale) {
  if (m == 0) throw Error(ErrorCode::kInvalidArgument, "window size must be >= 1");
  // Any difference counts here, even below kMoveEpsilon: the final volume
  // must match a rebuild at the target poses exactly.
  std::vector<std::size_t> moved;
  for (std::size_t i = 0; i < ctx.ledger.size(); ++i) {
    const LedgerEntry& e = ctx.ledger[i];
    if (!(e.integrated_pose == e.target_pose) ||
        pose_distance(e.integrated_pose, e.target_pose, scale) > kMoveEpsilon) {
      moved.push_back(i);
    }
  }
  for (std::size_t begin = 0; begin < moved.size(); begin += m) {
    const std::size_t end = std::min(begin + m, moved.size());
    correct_entries(ctx, std::span<const std::size_t>(moved).subspan(begin, end - begin));
  }
  return moved.size();
}

}  // namespace kfrecon

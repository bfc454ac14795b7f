#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "kfrecon/geometry.hpp"
#include "kfrecon/keyframe_fusion.hpp"
#include "kfrecon/sdf_volume.hpp"

namespace kfrecon {

/// Combined pose distance below which an entry counts as unmoved.
inline constexpr double kMoveEpsilon = 1e-6;

struct LedgerEntry {
  int keyframe_id = 0;
  Pose integrated_pose;  // pose the keyframe currently sits in the volume at
  Pose target_pose;      // anchor pose * rel_pose
  int anchor_id = 0;
  Pose rel_pose;
};

/// Anchor poses published by the SLAM backend at a given input frame.
struct PoseUpdateEvent {
  int at_frame = 0;
  std::map<int, Pose> anchor_poses;
  std::vector<int> new_dvo_keyframes;
};

/// Integration history in integration order, plus the current anchor poses.
class IntegrationLedger {
 public:
  void declare_anchor(int id, const Pose& pose);
  bool has_anchor(int id) const { return anchors_.count(id) != 0; }
  /// Throws kMalformedEvent for unknown ids.
  const Pose& anchor_pose(int id) const;
  const std::map<int, Pose>& anchors() const { return anchors_; }

  /// Records a keyframe integrated at anchor_pose(anchor_id) * rel_pose.
  LedgerEntry& append(int keyframe_id, int anchor_id, const Pose& rel_pose);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<LedgerEntry>& entries() const { return entries_; }
  LedgerEntry& operator[](std::size_t i) { return entries_[i]; }
  const LedgerEntry& operator[](std::size_t i) const { return entries_[i]; }

  /// Updates anchor poses and re-derives every dependent target pose.
  /// Returns how many entries' target changed. Anchors must be known or
  /// declared by the event itself, otherwise kMalformedEvent is thrown and
  /// nothing changes.
  std::size_t apply_pose_update(const PoseUpdateEvent& ev);

  /// pose_distance(integrated, target) per entry.
  std::vector<double> displacements(const PoseScale& scale = kDefaultPoseScale) const;

 private:
  std::map<int, Pose> anchors_;
  std::vector<LedgerEntry> entries_;
};

/// Start (0-based) of the window of min(m, K) consecutive entries with the
/// largest summed displacement; ties go to the smallest start. nullopt when
/// the ledger is empty or the best sum is below kMoveEpsilon.
std::optional<std::size_t> select_window(const IntegrationLedger& ledger, std::size_t m,
                                         const PoseScale& scale = kDefaultPoseScale);

/// The m most-displaced entries (0-based), largest first, ties by index.
std::vector<std::size_t> select_topk(const IntegrationLedger& ledger, std::size_t m,
                                     const PoseScale& scale = kDefaultPoseScale);

using KeyframeCatalog = std::map<int, Keyframe>;

struct CorrectionContext {
  TwoTierStore& store;
  IntegrationLedger& ledger;
  const KeyframeCatalog& keyframes;
  const Intrinsics& intrinsics;
};

struct CorrectionRecord {
  std::vector<std::size_t> entries;
  StreamCounters streaming;
};

/// De-integrates the given entries at their integrated poses and
/// re-integrates them at their targets, streaming the sphere to each pose
/// first. With `resume_at`, the sphere returns there afterwards. On a
/// de-integration failure the already removed entries are re-integrated at
/// their old poses and the error is rethrown.
CorrectionRecord correct_entries(CorrectionContext ctx, std::span<const std::size_t> entries,
                                 const std::optional<Vec3>& resume_at = std::nullopt);

/// Consecutive window [start, start + m) clipped to the ledger size.
CorrectionRecord correct_window(CorrectionContext ctx, std::size_t start, std::size_t m,
                                const std::optional<Vec3>& resume_at = std::nullopt);

/// Corrects the picks one at a time (the most-moved baseline).
CorrectionRecord correct_individually(CorrectionContext ctx,
                                      std::span<const std::size_t> picks,
                                      const std::optional<Vec3>& resume_at = std::nullopt);

/// Final pass: corrects every entry whose integrated pose differs from its
/// target, in ledger order, m at a time. Returns the number corrected.
std::size_t finalize(CorrectionContext ctx, std::size_t m,
                     const PoseScale& scale = kDefaultPoseScale);

}  // namespace kfrecon

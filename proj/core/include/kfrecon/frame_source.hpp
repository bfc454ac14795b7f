#pragma once

#include <map>
#include <vector>

#include "kfrecon/geometry.hpp"
#include "kfrecon/keyframe_fusion.hpp"
#include "kfrecon/reintegration.hpp"

namespace kfrecon {

/// Everything about a sequence except the images.
struct SequenceInfo {
  Intrinsics intrinsics;
  std::vector<int> frame_indices;          // ascending
  std::map<int, Pose> poses;               // SLAM estimate at arrival
  std::map<int, Pose> ground_truth;        // optional
  std::vector<PoseUpdateEvent> events;     // ascending at_frame
  std::vector<int> dvo_keyframes;          // optional, ascending
};

/// Random access to the frames of a sequence, loaded or rendered on demand.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual const SequenceInfo& info() const = 0;
  /// i-th frame in index order, carrying its arrival pose.
  virtual FrameObservation load(std::size_t i) const = 0;

  std::size_t size() const { return info().frame_indices.size(); }
};

}  // namespace kfrecon

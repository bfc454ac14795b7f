#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "kfrecon/frame_source.hpp"

namespace kfrecon {

/// Raw 16-bit depth units per meter.
inline constexpr double kDepthScale = 5000.0;

// Dataset directory:
//   intrinsics.txt        fx fy cx cy width height
//   depth/NNNNNN.png      16-bit gray, depth * 5000
//   color/NNNNNN.png      8-bit RGB
//   trajectory.txt        index tx ty tz qx qy qz qw   (arrival poses)
//   groundtruth.txt       same schema, optional
//   events.jsonl          pose updates, optional
//   dvo_keyframes.txt     one frame index per line, optional

std::string frame_file_name(int index);

/// Throws kIngestion naming the file on malformed lines; quaternions off
/// unit length by more than 1e-3 are rejected, others renormalized.
std::map<int, Pose> read_trajectory(const std::filesystem::path& path);
void write_trajectory(const std::filesystem::path& path, const std::map<int, Pose>& poses);

std::vector<PoseUpdateEvent> parse_events(std::istream& in, const std::string& origin);
std::vector<PoseUpdateEvent> read_events(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, const std::vector<PoseUpdateEvent>& events);

Intrinsics read_intrinsics(const std::filesystem::path& path);
void write_intrinsics(const std::filesystem::path& path, const Intrinsics& k);

class DiskDataset final : public FrameSource {
 public:
  explicit DiskDataset(std::filesystem::path root);

  const SequenceInfo& info() const override { return info_; }
  FrameObservation load(std::size_t i) const override;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  SequenceInfo info_;
};

/// Validates the layout and reads all metadata; images load lazily.
inline DiskDataset ingest_dataset(const std::filesystem::path& root) {
  return DiskDataset(root);
}

}  // namespace kfrecon

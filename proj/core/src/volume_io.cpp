#include "kfrecon/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "kfrecon/error.hpp"

namespace kfrecon {
namespace {

constexpr char kMagic[5] = {'S', 'D', 'F', 'V', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::kFormat, "truncated volume snapshot");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_volume(std::ostream& out, const TwoTierStore& store) {
  out.write(kMagic, sizeof(kMagic));
  put_le<double>(out, store.config().voxel_size);
  put_le<double>(out, store.config().truncation);
  const std::vector<BlockCoord> coords = store.sorted_coords();
  put_le<std::uint64_t>(out, coords.size());
  for (const BlockCoord& c : coords) {
    const VoxelBlock* block = store.find(c);
    put_le<std::int32_t>(out, c.x);
    put_le<std::int32_t>(out, c.y);
    put_le<std::int32_t>(out, c.z);
    for (const Voxel& v : block->voxels) {
      put_le<double>(out, v.sdf);
      put_le<double>(out, v.weight);
      for (double ch : v.color) put_le<double>(out, ch);
    }
  }
  if (!out) throw Error(ErrorCode::kFormat, "failed to write volume snapshot");
}

void save_volume(const std::filesystem::path& path, const TwoTierStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kFormat, "cannot open " + path.string() + " for writing");
  write_volume(out, store);
}

TwoTierStore read_volume(std::istream& in, VolumeConfig cfg) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kFormat, "not an SDFV1 volume snapshot");
  }
  cfg.voxel_size = get_le<double>(in);
  cfg.truncation = get_le<double>(in);
  if (cfg.stream_radius <= cfg.truncation) cfg.stream_radius = 2.0 * cfg.truncation;
  const auto count = get_le<std::uint64_t>(in);
  TwoTierStore store(cfg);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto block = std::make_unique<VoxelBlock>();
    block->coord.x = get_le<std::int32_t>(in);
    block->coord.y = get_le<std::int32_t>(in);
    block->coord.z = get_le<std::int32_t>(in);
    for (Voxel& v : block->voxels) {
      v.sdf = get_le<double>(in);
      v.weight = get_le<double>(in);
      for (double& ch : v.color) ch = get_le<double>(in);
    }
    store.insert_host(std::move(block));
  }
  return store;
}

TwoTierStore load_volume(const std::filesystem::path& path, VolumeConfig cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFormat, "cannot open " + path.string());
  return read_volume(in, cfg);
}

}  // namespace kfrecon

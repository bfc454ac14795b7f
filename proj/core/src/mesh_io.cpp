#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "kfrecon/error.hpp"
#include "kfrecon/meshing.hpp"

namespace kfrecon {
namespace {

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorCode::kFormat, "truncated PLY body in " + path.string());
  }
  return value;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

// Little-endian hosts only; the header declares binary_little_endian.
static_assert(std::endian::native == std::endian::little);

void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kFormat, "cannot open " + path.string() + " for writing");
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& p = mesh.vertices[i];
    put<float>(out, static_cast<float>(p.x()));
    put<float>(out, static_cast<float>(p.y()));
    put<float>(out, static_cast<float>(p.z()));
    const RgbD c = i < mesh.colors.size() ? mesh.colors[i] : RgbD{};
    for (double ch : c) put<std::uint8_t>(out, to_byte(ch));
  }
  for (const auto& t : mesh.triangles) {
    put<std::uint8_t>(out, 3);
    for (std::uint32_t idx : t) put<std::int32_t>(out, static_cast<std::int32_t>(idx));
  }
  if (!out) throw Error(ErrorCode::kFormat, "failed writing " + path.string());
}

TriangleMesh read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFormat, "cannot open " + path.string());
  std::string line;
  std::size_t vertex_count = 0;
  std::size_t face_count = 0;
  std::vector<std::string> vertex_props;
  bool in_vertex = false;
  bool binary_le = false;
  if (!std::getline(in, line) || line != "ply") {
    throw Error(ErrorCode::kFormat, path.string() + " is not a PLY file");
  }
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) vertex_count = count;
      if (name == "face") face_count = count;
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      vertex_props.push_back(type + " " + name);
    } else if (word == "end_header") {
      break;
    }
  }
  const std::vector<std::string> expected = {"float x", "float y", "float z",
                                             "uchar red", "uchar green", "uchar blue"};
  if (!binary_le || vertex_props != expected) {
    throw Error(ErrorCode::kFormat, path.string() + ": unsupported PLY layout");
  }
  TriangleMesh mesh;
  mesh.vertices.reserve(vertex_count);
  mesh.colors.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    const float x = get<float>(in, path), y = get<float>(in, path), z = get<float>(in, path);
    mesh.vertices.emplace_back(x, y, z);
    RgbD c{};
    for (double& ch : c) ch = get<std::uint8_t>(in, path);
    mesh.colors.push_back(c);
  }
  mesh.triangles.reserve(face_count);
  for (std::size_t i = 0; i < face_count; ++i) {
    if (get<std::uint8_t>(in, path) != 3) {
      throw Error(ErrorCode::kFormat, path.string() + ": only triangles are supported");
    }
    std::array<std::uint32_t, 3> t{};
    for (auto& idx : t) {
      const auto v = get<std::int32_t>(in, path);
      if (v < 0 || static_cast<std::size_t>(v) >= vertex_count) {
        throw Error(ErrorCode::kFormat, path.string() + ": face index out of range");
      }
      idx = static_cast<std::uint32_t>(v);
    }
    mesh.triangles.push_back(t);
  }
  return mesh;
}

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kFormat, "cannot open " + path.string() + " for writing");
  out.precision(9);
  for (const Vec3& p : mesh.vertices) out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
  if (!out) throw Error(ErrorCode::kFormat, "failed writing " + path.string());
}

}  // namespace kfrecon

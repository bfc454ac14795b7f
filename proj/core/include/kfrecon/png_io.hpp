#pragma once

#include <filesystem>

#include "kfrecon/image.hpp"

namespace kfrecon {

/// 16-bit grayscale PNG; raw / scale meters, raw 0 stays invalid.
DepthMap read_depth_png(const std::filesystem::path& path, double scale);
void write_depth_png(const std::filesystem::path& path, const DepthMap& depth, double scale);

/// 8-bit RGB (gray and alpha inputs are expanded / stripped).
ColorImage read_color_png(const std::filesystem::path& path);
void write_color_png(const std::filesystem::path& path, const ColorImage& image);

}  // namespace kfrecon

#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <vector>

namespace kfrecon {

/// Dense row-major image.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, const T& fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) {
    assert(in_bounds(x, y));
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  const T& operator()(int x, int y) const {
    assert(in_bounds(x, y));
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  bool in_bounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Rgb8 = std::array<std::uint8_t, 3>;
using RgbD = std::array<double, 3>;

/// Depth in meters; 0 marks an invalid measurement.
using DepthMap = Image<double>;
using ColorImage = Image<Rgb8>;
using GrayImage = Image<double>;
using Mask = Image<std::uint8_t>;

GrayImage to_gray(const ColorImage& image);

/// Separable Gaussian with clamped borders; kernel radius ceil(3 sigma).
GrayImage gaussian_blur(const GrayImage& image, double sigma);
ColorImage gaussian_blur(const ColorImage& image, double sigma);

/// Bilinear sample at a sub-pixel location inside [0, w-1] x [0, h-1].
RgbD sample_bilinear(const ColorImage& image, double u, double v);

}  // namespace kfrecon

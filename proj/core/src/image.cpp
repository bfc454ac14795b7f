#include "kfrecon/image.hpp"

#include <algorithm>
#include <cmath>

namespace kfrecon {
namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;
  return kernel;
}

template <typename Get, typename Set>
void convolve_separable(int w, int h, const std::vector<double>& kernel, Get get, Set set) {
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[i + radius] * get(std::clamp(x + i, 0, w - 1), y);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      }
      set(x, y, acc);
    }
  }
}

}  // namespace

GrayImage to_gray(const ColorImage& image) {
  GrayImage gray(image.width(), image.height());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const Rgb8& c = image.data()[i];
    gray.data()[i] = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
  }
  return gray;
}

GrayImage gaussian_blur(const GrayImage& image, double sigma) {
  if (sigma <= 0.0 || image.empty()) return image;
  GrayImage out(image.width(), image.height());
  convolve_separable(
      image.width(), image.height(), gaussian_kernel(sigma),
      [&](int x, int y) { return image(x, y); },
      [&](int x, int y, double v) { out(x, y) = v; });
  return out;
}

ColorImage gaussian_blur(const ColorImage& image, double sigma) {
  if (sigma <= 0.0 || image.empty()) return image;
  ColorImage out(image.width(), image.height());
  const auto kernel = gaussian_kernel(sigma);
  for (int ch = 0; ch < 3; ++ch) {
    convolve_separable(
        image.width(), image.height(), kernel,
        [&](int x, int y) { return static_cast<double>(image(x, y)[ch]); },
        [&](int x, int y, double v) {
          out(x, y)[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        });
  }
  return out;
}

RgbD sample_bilinear(const ColorImage& image, double u, double v) {
  const int x0 = std::clamp(static_cast<int>(std::floor(u)), 0, image.width() - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(v)), 0, image.height() - 1);
  const int x1 = std::min(x0 + 1, image.width() - 1);
  const int y1 = std::min(y0 + 1, image.height() - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  RgbD out{};
  for (int ch = 0; ch < 3; ++ch) {
    const double top = (1.0 - fx) * image(x0, y0)[ch] + fx * image(x1, y0)[ch];
    const double bottom = (1.0 - fx) * image(x0, y1)[ch] + fx * image(x1, y1)[ch];
    out[ch] = (1.0 - fy) * top + fy * bottom;
  }
  return out;
}

}  // namespace kfrecon

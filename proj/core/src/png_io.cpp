#include "kfrecon/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "kfrecon/error.hpp"

namespace kfrecon {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode, ErrorCode code) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(code, "cannot open " + path.string());
  return f;
}

struct Decoded {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<unsigned char> pixels;  // row-major, big-endian 16-bit samples
};

// libpng reports errors through longjmp; only trivially destructible locals
// live between setjmp and the calls that may jump.
bool decode_png(std::FILE* file, Decoded& out, std::string& message) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) {
    message = "libpng initialization failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    message = "libpng initialization failed";
    return false;
  }
  std::vector<png_bytep>* volatile rows = nullptr;
  if (setjmp(png_jmpbuf(png))) {
    delete rows;
    png_destroy_read_struct(&png, &info, nullptr);
    message = "corrupt or truncated PNG";
    return false;
  }
  png_init_io(png, file);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(width);
  out.height = static_cast<int>(height);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * height);
  rows = new std::vector<png_bytep>(height);
  for (png_uint_32 y = 0; y < height; ++y) (*rows)[y] = out.pixels.data() + y * stride;
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  delete rows;
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool encode_png(std::FILE* file, int width, int height, int bit_depth, int color_type,
                const std::vector<unsigned char>& pixels, std::size_t stride,
                std::string& message) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) {
    message = "libpng initialization failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    message = "libpng initialization failed";
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    message = "PNG encoding failed";
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

Decoded read_png(const std::filesystem::path& path) {
  const File file = open_file(path, "rb", ErrorCode::kIngestion);
  Decoded d;
  std::string message;
  if (!decode_png(file.get(), d, message)) {
    throw Error(ErrorCode::kIngestion, path.string() + ": " + message);
  }
  return d;
}

void write_png(const std::filesystem::path& path, int width, int height, int bit_depth,
               int color_type, const std::vector<unsigned char>& pixels, std::size_t stride) {
  const File file = open_file(path, "wb", ErrorCode::kFormat);
  std::string message;
  if (!encode_png(file.get(), width, height, bit_depth, color_type, pixels, stride, message)) {
    throw Error(ErrorCode::kFormat, path.string() + ": " + message);
  }
}

}  // namespace

DepthMap read_depth_png(const std::filesystem::path& path, double scale) {
  const Decoded d = read_png(path);
  if (d.bit_depth != 16 || d.channels != 1) {
    throw Error(ErrorCode::kIngestion, path.string() + ": depth must be 16-bit grayscale");
  }
  DepthMap depth(d.width, d.height, 0.0);
  const std::size_t stride = static_cast<std::size_t>(d.width) * 2;
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const unsigned char* s = d.pixels.data() + y * stride + 2 * x;
      const unsigned raw = (static_cast<unsigned>(s[0]) << 8) | s[1];
      depth(x, y) = raw / scale;
    }
  }
  return depth;
}

void write_depth_png(const std::filesystem::path& path, const DepthMap& depth, double scale) {
  const std::size_t stride = static_cast<std::size_t>(depth.width()) * 2;
  std::vector<unsigned char> pixels(stride * depth.height());
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      const double z = depth(x, y);
      const long raw = z > 0.0 ? std::clamp(std::lround(z * scale), 0L, 65535L) : 0L;
      unsigned char* d = pixels.data() + y * stride + 2 * x;
      d[0] = static_cast<unsigned char>(raw >> 8);
      d[1] = static_cast<unsigned char>(raw & 0xFF);
    }
  }
  write_png(path, depth.width(), depth.height(), 16, PNG_COLOR_TYPE_GRAY, pixels, stride);
}

ColorImage read_color_png(const std::filesystem::path& path) {
  const Decoded d = read_png(path);
  if (d.bit_depth != 8) {
    throw Error(ErrorCode::kIngestion, path.string() + ": color must be 8-bit");
  }
  ColorImage image(d.width, d.height);
  const std::size_t stride = static_cast<std::size_t>(d.width) * d.channels;
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const unsigned char* s = d.pixels.data() + y * stride + d.channels * x;
      image(x, y) = d.channels >= 3 ? Rgb8{s[0], s[1], s[2]} : Rgb8{s[0], s[0], s[0]};
    }
  }
  return image;
}

void write_color_png(const std::filesystem::path& path, const ColorImage& image) {
  const std::size_t stride = static_cast<std::size_t>(image.width()) * 3;
  std::vector<unsigned char> pixels(stride * image.height());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const Rgb8& c = image(x, y);
      std::copy(c.begin(), c.end(), pixels.begin() + y * stride + 3 * x);
    }
  }
  write_png(path, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB, pixels, stride);
}

}  // namespace kfrecon

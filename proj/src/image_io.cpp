#include "relnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace relnet {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("libpng: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

void write_png(const std::filesystem::path& path, int width, int height, int color_type, int bit_depth,
               const std::vector<unsigned char>& bytes) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
    const std::size_t stride = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
    for (int y = 0; y < height; ++y) {
      png_write_row(png, const_cast<png_bytep>(bytes.data() + stride * static_cast<std::size_t>(y)));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<unsigned char> bytes;
};

RawPng read_raw(const std::filesystem::path& path, bool expand_to_rgb) {
  auto f = open_file(path, "rb");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw std::runtime_error("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  RawPng raw;
  try {
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (expand_to_rgb) {
      if (depth == 16) png_set_strip_16(png);
      if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    } else if (depth == 16) {
      png_set_swap(png);  // host little-endian
    }
    png_read_update_info(png, info);
    raw.width = static_cast<int>(png_get_image_width(png, info));
    raw.height = static_cast<int>(png_get_image_height(png, info));
    raw.channels = png_get_channels(png, info);
    raw.bit_depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    raw.bytes.resize(stride * static_cast<std::size_t>(raw.height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(raw.height));
    for (int y = 0; y < raw.height; ++y) rows[static_cast<std::size_t>(y)] = raw.bytes.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

void put_pixel(Image& image, int x, int y, const Rgb& color) {
  if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
  for (int c = 0; c < 3; ++c) image(c, y, x) = color[static_cast<std::size_t>(c)];
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  RawPng raw = read_raw(path, true);
  Image img(3, raw.height, raw.width);
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        img(c, y, x) = raw.bytes[(static_cast<std::size_t>(y) * raw.width + x) * 3 + c] / 255.0f;
      }
    }
  }
  return img;
}

void write_png_rgb(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw std::invalid_argument("write_png_rgb: image must have 3 channels");
  std::vector<unsigned char> bytes(static_cast<std::size_t>(image.pixels()) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image(c, y, x), 0.0f, 1.0f);
        bytes[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  write_png(path, image.width, image.height, PNG_COLOR_TYPE_RGB, 8, bytes);
}

void write_png_gray16(const std::filesystem::path& path, const FeatureMap<float>& map) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(map.pixels()) * 2);
  for (Eigen::Index k = 0; k < map.pixels(); ++k) {
    const auto v = static_cast<unsigned>(std::lround(std::clamp(map.data(0, k), 0.0f, 1.0f) * 65535.0f));
    bytes[2 * static_cast<std::size_t>(k)] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
    bytes[2 * static_cast<std::size_t>(k) + 1] = static_cast<unsigned char>(v & 0xff);
  }
  write_png(path, map.width, map.height, PNG_COLOR_TYPE_GRAY, 16, bytes);
}

FeatureMap<float> read_png_gray16(const std::filesystem::path& path) {
  RawPng raw = read_raw(path, false);
  if (raw.bit_depth != 16 || raw.channels != 1) throw std::runtime_error("expected 16-bit gray PNG: " + path.string());
  FeatureMap<float> map(1, raw.height, raw.width);
  for (Eigen::Index k = 0; k < map.pixels(); ++k) {
    const unsigned v = raw.bytes[2 * static_cast<std::size_t>(k)] |
                       (static_cast<unsigned>(raw.bytes[2 * static_cast<std::size_t>(k) + 1]) << 8);
    map.data(0, k) = static_cast<float>(v) / 65535.0f;
  }
  return map;
}

void draw_rect(Image& image, double x0, double y0, double x1, double y1, const Rgb& color, int thickness) {
  const int l = static_cast<int>(std::lround(x0));
  const int t = static_cast<int>(std::lround(y0));
  const int r = static_cast<int>(std::lround(x1));
  const int b = static_cast<int>(std::lround(y1));
  for (int k = 0; k < thickness; ++k) {
    for (int x = l - k; x <= r + k; ++x) {
      put_pixel(image, x, t - k, color);
      put_pixel(image, x, b + k, color);
    }
    for (int y = t - k; y <= b + k; ++y) {
      put_pixel(image, l - k, y, color);
      put_pixel(image, r + k, y, color);
    }
  }
}

void draw_line(Image& image, const Point2& a, const Point2& b, const Rgb& color, int thickness) {
  const double len = (b - a).norm();
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
  const int half = thickness / 2;
  for (int s = 0; s <= steps; ++s) {
    const Point2 p = a + (b - a) * (static_cast<double>(s) / steps);
    const int px = static_cast<int>(std::lround(p.x()));
    const int py = static_cast<int>(std::lround(p.y()));
    for (int dy = -half; dy <= half; ++dy) {
      for (int dx = -half; dx <= half; ++dx) put_pixel(image, px + dx, py + dy, color);
    }
  }
}

}  // namespace relnet

#pragma once

#include "relnet/geometry.hpp"
#include "relnet/tensor.hpp"

#include <array>
#include <filesystem>

namespace relnet {

using Rgb = std::array<float, 3>;

/// Reads an 8- or 16-bit PNG (gray, RGB, with or without alpha) as RGB in [0,1].
Image read_png(const std::filesystem::path& path);

/// Writes an 8-bit RGB PNG; values are clamped to [0,1] and rounded.
void write_png_rgb(const std::filesystem::path& path, const Image& image);

/// Writes channel 0 of `map` as a 16-bit grayscale PNG, scaling [0,1] to [0,65535].
void write_png_gray16(const std::filesystem::path& path, const FeatureMap<float>& map);

/// Reads a 16-bit grayscale PNG back into [0,1].
FeatureMap<float> read_png_gray16(const std::filesystem::path& path);

void draw_rect(Image& image, double x0, double y0, double x1, double y1, const Rgb& color, int thickness = 1);
void draw_line(Image& image, const Point2& a, const Point2& b, const Rgb& color, int thickness = 1);

}  // namespace relnet

#pragma once

// 8-bit RGB image files and the conversions between them and pixel grids.

#include "stylenerf/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace snerf {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

/// PNG or JPEG by content; throws ArgumentError for anything else or a bad file.
Image load_image(const std::string& path);
void save_png(const std::string& path, const Image& img);
std::vector<std::uint8_t> encode_png(const Image& img);
std::vector<std::uint8_t> encode_jpeg(const Image& img, int quality = 85);

Image center_crop(const Image& img);
/// Area-averaging when shrinking, bilinear when enlarging.
Image resize(const Image& img, int width, int height);

/// res^2 x 3 in [-1, 1] from a square image of side res.
ad::Mat image_to_grid(const Image& img);
/// Item `item` of a (B * res^2) x 3 grid; values clamped from [-1, 1] to bytes.
Image grid_to_image(const ad::Mat& grid, int res, int item = 0);
/// Single-channel map to a grayscale RGB image, normalized by [lo, hi].
Image scalar_to_image(const ad::Mat& values, int res, double lo, double hi, int item = 0);

}  // namespace snerf

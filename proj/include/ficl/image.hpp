#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "ficl/digest.hpp"

namespace ficl {

// Single-channel image with pixels in [0, 1], row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
  bool operator==(const Image&) const = default;
};

// Validates extents and pixel range; throws InputError.
Image make_image(std::size_t height, std::size_t width, std::vector<double> pixels);

// Zero-pads bottom/right to a square whose side is a multiple of `patch`.
// Idempotent: padding an already padded image returns it unchanged.
Image pad_to_square(const Image& img, std::size_t patch);

Digest image_digest(const Image& img);

// Reads a binary PGM (P5, maxval <= 255) or the raw format: 16-byte header
// {u64 height, u64 width} followed by height*width little-endian float64.
Image read_image(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& img);
void write_raw_image(const std::filesystem::path& path, const Image& img);

}  // namespace ficl

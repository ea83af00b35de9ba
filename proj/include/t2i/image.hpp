#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "t2i/tensor.hpp"

namespace t2i {

/// 8-bit interleaved RGB raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, fill) {}
  std::uint8_t* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  bool operator==(const Image&) const = default;
};

/// Binary PPM: "P6\n<w> <h>\n255\n" followed by raw RGB.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

/// Batch of images -> (B, 3, H, W) with v / 127.5 - 1.
Tensor images_to_tensor(std::span<const Image> images);
/// Item `index` of a (B, 3, H, W) tensor -> image with round((v + 1) * 127.5)
/// clamped to [0, 255].
Image tensor_to_image(const Tensor& batch, std::int64_t index);

/// Row-major tiling with a black gutter between and around tiles.
Image tile_grid(std::span<const Image> tiles, int columns, int gutter = 2);

/// Box-filter downsampling by an integer factor.
Image downsample(const Image& image, int factor);

}  // namespace t2i

#pragma once

#include "multidiff/types.hpp"

#include <filesystem>
#include <stdexcept>
#include <vector>

namespace multidiff {

/// Planar (C, H, W) float image with values nominally in [0, 1].
struct Image {
  Shape3 shape;
  std::vector<float> data;

  Image() = default;
  explicit Image(const Shape3& s, float fill = 0.0f)
      : shape(s), data(static_cast<std::size_t>(s.size()), fill) {}

  float& at(int c, int y, int x) {
    return data[static_cast<std::size_t>((c * shape.height + y) * shape.width + x)];
  }
  [[nodiscard]] float at(int c, int y, int x) const {
    return data[static_cast<std::size_t>((c * shape.height + y) * shape.width + x)];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decodes an 8- or 16-bit PNG into 1 (gray) or 3 (RGB) channels; alpha is dropped.
Image read_png(const std::filesystem::path& path);
/// Writes an 8-bit gray or RGB PNG; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);

/// Centred square crop of side `size` (0 picks the largest square that fits).
Image center_crop(const Image& image, int size = 0);
/// Area-averaging resample to (height, width).
Image resize_area(const Image& image, int height, int width);
/// Gray <-> RGB conversion: gray is replicated, RGB is reduced to Rec. 601 luma.
Image to_channels(const Image& image, int channels);
/// Tiles equally sized images row-major into a rows x cols grid (missing cells black).
Image tile_grid(const std::vector<Image>& images, int rows, int cols);

}  // namespace multidiff

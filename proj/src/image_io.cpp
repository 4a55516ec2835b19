#include "multidiff/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace multidiff {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw ImageIoError("cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw ImageIoError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageIoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const auto width = static_cast<int>(png_get_image_width(png, info));
  const auto height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * static_cast<std::size_t>(height));
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + stride * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3) throw ImageIoError("unsupported PNG layout: " + path.string());
  Image img(Shape3{channels, height, width});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(c, y, x) = rows[static_cast<std::size_t>(y)][x * channels + c] / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const int channels = image.shape.channels;
  if (channels != 1 && channels != 3) throw ImageIoError("PNG output needs 1 or 3 channels");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw ImageIoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageIoError("libpng initialisation failed");
  }
  const int w = image.shape.width;
  const int h = image.shape.height;
  std::vector<unsigned char> buffer(static_cast<std::size_t>(w * h * channels));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buffer[static_cast<std::size_t>((y * w + x) * channels + c)] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  std::vector<png_bytep> rows(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + static_cast<std::size_t>(y * w * channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image center_crop(const Image& image, int size) {
  const int side = size > 0 ? size : std::min(image.shape.height, image.shape.width);
  if (side > image.shape.height || side > image.shape.width)
    throw ValidationError("center_crop: crop larger than image");
  const int y0 = (image.shape.height - side) / 2;
  const int x0 = (image.shape.width - side) / 2;
  Image out(Shape3{image.shape.channels, side, side});
  for (int c = 0; c < image.shape.channels; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) out.at(c, y, x) = image.at(c, y0 + y, x0 + x);
  return out;
}

namespace {

// Weights of source cells overlapping destination cell i when mapping n_src -> n_dst.
std::vector<std::vector<std::pair<int, double>>> area_weights(int n_src, int n_dst) {
  std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(n_dst));
  const double scale = static_cast<double>(n_src) / n_dst;
  for (int i = 0; i < n_dst; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    for (int s = static_cast<int>(std::floor(lo)); s < std::min(n_src, static_cast<int>(std::ceil(hi))); ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 0) w[static_cast<std::size_t>(i)].emplace_back(s, overlap / scale);
    }
  }
  return w;
}

}  // namespace

Image resize_area(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw ValidationError("resize_area: target must be positive");
  const auto wy = area_weights(image.shape.height, height);
  const auto wx = area_weights(image.shape.width, width);
  Image out(Shape3{image.shape.channels, height, width});
  for (int c = 0; c < image.shape.channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (auto [sy, fy] : wy[static_cast<std::size_t>(y)])
          for (auto [sx, fx] : wx[static_cast<std::size_t>(x)]) acc += fy * fx * image.at(c, sy, sx);
        out.at(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

Image to_channels(const Image& image, int channels) {
  const int have = image.shape.channels;
  if (channels != 1 && channels != 3) throw ValidationError("to_channels: target must be 1 or 3 channels");
  if (have == channels) return image;
  Image out(Shape3{channels, image.shape.height, image.shape.width});
  for (int y = 0; y < image.shape.height; ++y)
    for (int x = 0; x < image.shape.width; ++x) {
      float gray = image.at(0, y, x);
      if (have == 3) gray = 0.299f * image.at(0, y, x) + 0.587f * image.at(1, y, x) + 0.114f * image.at(2, y, x);
      else if (have != 1) throw ValidationError("to_channels: unsupported source channel count");
      for (int c = 0; c < channels; ++c) out.at(c, y, x) = gray;
    }
  return out;
}

Image tile_grid(const std::vector<Image>& images, int rows, int cols) {
  if (images.empty() || rows < 1 || cols < 1) throw ValidationError("tile_grid: nothing to tile");
  const Shape3 s = images.front().shape;
  Image out(Shape3{s.channels, s.height * rows, s.width * cols});
  for (std::size_t i = 0; i < images.size() && i < static_cast<std::size_t>(rows * cols); ++i) {
    if (!(images[i].shape == s)) throw ValidationError("tile_grid: images differ in shape");
    const int gy = static_cast<int>(i) / cols;
    const int gx = static_cast<int>(i) % cols;
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) out.at(c, gy * s.height + y, gx * s.width + x) = images[i].at(c, y, x);
  }
  return out;
}

}  // namespace multidiff

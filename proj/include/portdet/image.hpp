#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace portdet {

// Row-major single-channel image. Pixel (x, y) is column x, row y; its centre
// sits at the continuous coordinate (x, y).
template <class T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const Image& a, const Image& b) {
    return a.width == b.width && a.height == b.height && a.data == b.data;
  }
};

// Values in [0, 1]: filter outputs, ground-truth and projected masks.
using MaskImage = Image<float>;
// 0 or 1 per pixel.
using BinaryImage = Image<std::uint8_t>;

// Planar (channel-major) frame, values in [0, 1]; 1 channel for event
// histograms, 3 for RGB.
struct InputFrame {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  InputFrame() = default;
  InputFrame(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int c, int x, int y) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int x, int y) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  // Throws ConfigError unless channels is 1 or 3 and every value is in [0, 1].
  void validate() const;

  static InputFrame from_mask(const MaskImage& m);
  // Channel mean.
  MaskImage luminance() const;
};

// 8-bit binary PGM (P5). Mask values are stored as round(255 v).
void write_pgm(const std::string& path, const MaskImage& img);
void write_pgm(const std::string& path, const BinaryImage& img);
MaskImage read_pgm(const std::string& path);
BinaryImage read_pgm_binary(const std::string& path);

// 8-bit RGB PPM (P6), interleaved.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};
void write_ppm(const std::string& path, const RgbImage& img);

// Quantizes to the PGM grid: round(255 v) / 255.
float quantize8(float v);

}  // namespace portdet

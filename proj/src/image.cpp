#include "portdet/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "portdet/errors.hpp"

namespace portdet {
namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

void write_p5(const std::string& path, int w, int h, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

// Reads the next header token, skipping whitespace and comments.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  if (tok.empty()) throw FormatError(path + ": truncated PGM header");
  return tok;
}

std::vector<std::uint8_t> read_p5(const std::string& path, int& w, int& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  if (next_token(in, path) != "P5") throw FormatError(path + ": not a binary PGM");
  try {
    w = std::stoi(next_token(in, path));
    h = std::stoi(next_token(in, path));
    if (std::stoi(next_token(in, path)) != 255) throw FormatError(path + ": only 8-bit PGM is supported");
  } catch (const std::invalid_argument&) {
    throw FormatError(path + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0) throw FormatError(path + ": bad PGM dimensions");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError(path + ": truncated PGM data");
  return bytes;
}

}  // namespace

void InputFrame::validate() const {
  if (channels != 1 && channels != 3) throw ConfigError("input frame must have 1 or 3 channels");
  if (data.size() != static_cast<std::size_t>(width) * height * channels) {
    throw ConfigError("input frame buffer size does not match its shape");
  }
  for (float v : data) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("input frame values must lie in [0, 1]");
  }
}

InputFrame InputFrame::from_mask(const MaskImage& m) {
  InputFrame f;
  f.width = m.width;
  f.height = m.height;
  f.channels = 1;
  f.data = m.data;
  return f;
}

MaskImage InputFrame::luminance() const {
  MaskImage out(width, height);
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (std::size_t i = 0; i < plane; ++i) {
    float s = 0.0f;
    for (int c = 0; c < channels; ++c) s += data[c * plane + i];
    out.data[i] = s / static_cast<float>(channels);
  }
  return out;
}

void write_pgm(const std::string& path, const MaskImage& img) {
  std::vector<std::uint8_t> bytes(img.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
  write_p5(path, img.width, img.height, bytes);
}

void write_pgm(const std::string& path, const BinaryImage& img) {
  std::vector<std::uint8_t> bytes(img.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(),
                 [](std::uint8_t v) -> std::uint8_t { return v ? 255 : 0; });
  write_p5(path, img.width, img.height, bytes);
}

MaskImage read_pgm(const std::string& path) {
  int w = 0, h = 0;
  const auto bytes = read_p5(path, w, h);
  MaskImage img(w, h);
  std::transform(bytes.begin(), bytes.end(), img.data.begin(),
                 [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return img;
}

BinaryImage read_pgm_binary(const std::string& path) {
  int w = 0, h = 0;
  const auto bytes = read_p5(path, w, h);
  BinaryImage img(w, h);
  std::transform(bytes.begin(), bytes.end(), img.data.begin(),
                 [](std::uint8_t b) -> std::uint8_t { return b >= 128 ? 1 : 0; });
  return img;
}

void RgbImage::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  data[i] = r;
  data[i + 1] = g;
  data[i + 2] = b;
}

void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!out) throw IoError("write failed: " + path);
}

float quantize8(float v) { return static_cast<float>(to_byte(v)) / 255.0f; }

}  // namespace portdet

#include "portdet/raster.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "portdet/errors.hpp"

namespace portdet {
namespace {

// Neighbour offsets P2..P9, clockwise from north.
constexpr std::array<int, 8> kDx = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr std::array<int, 8> kDy = {-1, -1, 0, 1, 1, 1, 0, -1};

// Deletion tables indexed by the neighbour bitmask (bit i = P(i+2)).
struct ThinningTables {
  std::array<bool, 256> first{};
  std::array<bool, 256> second{};

  ThinningTables() {
    for (int mask = 0; mask < 256; ++mask) {
      std::array<int, 8> p{};
      for (int i = 0; i < 8; ++i) p[i] = (mask >> i) & 1;
      const int b = std::accumulate(p.begin(), p.end(), 0);
      int a = 0;
      for (int i = 0; i < 8; ++i) a += (p[i] == 0 && p[(i + 1) % 8] == 1);
      const bool base = b >= 2 && b <= 6 && a == 1;
      // p[0]=P2 (N), p[2]=P4 (E), p[4]=P6 (S), p[6]=P8 (W)
      first[mask] = base && p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0;
      second[mask] = base && p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0;
    }
  }
};

const ThinningTables& tables() {
  static const ThinningTables t;
  return t;
}

int neighbour_mask(const BinaryImage& img, int x, int y) {
  int mask = 0;
  for (int i = 0; i < 8; ++i) {
    const int nx = x + kDx[i];
    const int ny = y + kDy[i];
    if (img.inside(nx, ny) && img.at(nx, ny)) mask |= 1 << i;
  }
  return mask;
}

}  // namespace

BinaryImage binarize(const MaskImage& mask, float threshold) {
  if (!(threshold > 0.0f && threshold < 1.0f)) throw ConfigError("binarize threshold must lie in (0, 1)");
  BinaryImage out(mask.width, mask.height);
  std::transform(mask.data.begin(), mask.data.end(), out.data.begin(),
                 [threshold](float v) -> std::uint8_t { return v >= threshold ? 1 : 0; });
  return out;
}

BinaryImage skeletonize(const BinaryImage& img) {
  BinaryImage out = img;
  for (auto& v : out.data) v = v ? 1 : 0;

  std::vector<std::pair<int, int>> candidates;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      if (out.at(x, y)) candidates.emplace_back(x, y);

  const auto& lut = tables();
  std::vector<std::pair<int, int>> doomed;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      const auto& table = pass == 0 ? lut.first : lut.second;
      doomed.clear();
      for (const auto& [x, y] : candidates) {
        if (table[neighbour_mask(out, x, y)]) doomed.emplace_back(x, y);
      }
      for (const auto& [x, y] : doomed) out.at(x, y) = 0;
      if (!doomed.empty()) {
        changed = true;
        std::erase_if(candidates, [&out](const auto& c) { return out.at(c.first, c.second) == 0; });
      }
    }
  }
  return out;
}

std::vector<Vec2> active_pixels(const BinaryImage& img) {
  std::vector<Vec2> pts;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (img.at(x, y)) pts.emplace_back(x, y);
  return pts;
}

std::size_t count_active(const BinaryImage& img) {
  return static_cast<std::size_t>(std::count_if(img.data.begin(), img.data.end(), [](auto v) { return v != 0; }));
}

GateResult gate(const BinaryImage& img, int gamma_s) {
  if (gamma_s < 0) throw ConfigError("gamma_s must be non-negative");
  return count_active(img) < static_cast<std::size_t>(gamma_s) ? GateResult::abort : GateResult::pass;
}

int count_components(const BinaryImage& img) {
  std::vector<std::uint8_t> seen(img.size(), 0);
  std::vector<std::pair<int, int>> stack;
  int components = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * img.width + x;
      if (!img.data[idx] || seen[idx]) continue;
      ++components;
      seen[idx] = 1;
      stack.emplace_back(x, y);
      while (!stack.empty()) {
        const auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int i = 0; i < 8; ++i) {
          const int nx = cx + kDx[i];
          const int ny = cy + kDy[i];
          if (!img.inside(nx, ny)) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * img.width + nx;
          if (img.data[n] && !seen[n]) {
            seen[n] = 1;
            stack.emplace_back(nx, ny);
          }
        }
      }
    }
  }
  return components;
}

}  // namespace portdet

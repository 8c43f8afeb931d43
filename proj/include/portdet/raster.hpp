#pragma once

#include <vector>

#include "portdet/geometry.hpp"
#include "portdet/image.hpp"

namespace portdet {

inline constexpr float kDefaultBinarizeThreshold = 0.5f;
inline constexpr int kDefaultGammaS = 30;

// Active iff value >= threshold; threshold must lie in (0, 1).
BinaryImage binarize(const MaskImage& mask, float threshold = kDefaultBinarizeThreshold);

// Zhang-Suen two-subiteration thinning, 8-connected foreground, pixels
// outside the image count as background. Runs to convergence.
BinaryImage skeletonize(const BinaryImage& img);

// (col, row) of every active pixel, in row-major order.
std::vector<Vec2> active_pixels(const BinaryImage& img);

std::size_t count_active(const BinaryImage& img);

enum class GateResult { pass, abort };

// Aborts when fewer than gamma_s pixels are active.
GateResult gate(const BinaryImage& img, int gamma_s = kDefaultGammaS);

// Number of 8-connected foreground components.
int count_components(const BinaryImage& img);

}  // namespace portdet

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "portdet/geometry.hpp"

namespace portdet {

// A x^2 + B xy + C y^2 + D x + E y + 1 = 0.
struct Conic {
  double A = 0, B = 0, C = 0, D = 0, E = 0;
  static constexpr double F = 1.0;

  double operator()(const Vec2& p) const {
    const double x = p.x(), y = p.y();
    return A * x * x + B * x * y + C * y * y + D * x + E * y + F;
  }
  double discriminant() const { return B * B - 4.0 * A * C; }
  bool is_ellipse() const { return discriminant() < 0.0; }
};

struct EllipseAxes {
  Vec2 center = Vec2::Zero();
  double a = 1.0;      // semi-major, px
  double b = 1.0;      // semi-minor, px
  double theta = 0.0;  // major-axis direction, radians in [0, pi)

  Vec2 major_dir() const { return {std::cos(theta), std::sin(theta)}; }
  Vec2 minor_dir() const { return {-std::sin(theta), std::cos(theta)}; }
  std::array<Vec2, 2> major_endpoints() const { return {center - a * major_dir(), center + a * major_dir()}; }
  std::array<Vec2, 2> minor_endpoints() const { return {center - b * minor_dir(), center + b * minor_dir()}; }
  Vec2 point_at(double t) const { return center + a * std::cos(t) * major_dir() + b * std::sin(t) * minor_dir(); }
};

struct RansacConfig {
  int max_iterations = 200;
  double inlier_tolerance = 2.0;  // px
  double min_axis_ratio = 0.15;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

// Similarity taking pixel coordinates to a frame with zero centroid and
// RMS radius sqrt(2): q = scale * (p - centroid).
struct PointNormalization {
  Vec2 centroid = Vec2::Zero();
  double scale = 1.0;

  Vec2 apply(const Vec2& p) const { return scale * (p - centroid); }
  Vec2 invert(const Vec2& q) const { return q / scale + centroid; }
  // Maps an ellipse expressed in the normalized frame back to pixels.
  EllipseAxes invert(const EllipseAxes& e) const;
};

struct NormalizedPoints {
  std::vector<Vec2> points;
  PointNormalization transform;
};

// Empty when fewer than 5 points are given or all of them coincide.
std::optional<NormalizedPoints> normalize_points(std::span<const Vec2> points);

// Exact conic through five points. Empty for a singular system or a
// non-ellipse. Callers pass normalized coordinates.
std::optional<Conic> fit_conic_5pts(std::span<const Vec2, 5> points);

// Empty unless the conic is a real, non-degenerate ellipse.
std::optional<EllipseAxes> conic_to_axes(const Conic& c);

// Empty when b <= 0, a < b, or the ellipse passes through the origin (F = 1
// cannot represent it).
std::optional<Conic> axes_to_conic(const EllipseAxes& e);

// Conic expressed in normalized coordinates, re-expressed in pixel coordinates.
std::optional<Conic> denormalize(const Conic& c, const PointNormalization& t);

// First-order distance |f| / |grad f| with f = rho - 1, rho the normalized
// elliptic radius. Exact for circles, zero on the curve. At the centre the
// gradient vanishes and a large finite value is returned.
double point_distance(const EllipseAxes& e, const Vec2& pt);

// Least squares over [A..E] with F = 1 on points that are already normalized.
// Empty when the system is rank deficient.
std::optional<Conic> refine_least_squares_normalized(std::span<const Vec2> normalized_inliers);

// Normalizes the inliers, fits, and returns the pixel-frame conic.
std::optional<Conic> refine_least_squares(std::span<const Vec2> inliers);

// Least squares with each residual divided by the conic gradient at the
// point (Sampson weighting), reweighted from the previous fit. iterations = 0
// is refine_least_squares.
std::optional<Conic> refine_sampson(std::span<const Vec2> points, int iterations = 3);

// RMS algebraic residual of a conic over points in the same frame.
double algebraic_rms(const Conic& c, std::span<const Vec2> normalized_points);

struct RansacResult {
  EllipseAxes ellipse;             // refined (or best hypothesis if refinement failed)
  EllipseAxes hypothesis;          // best five-point hypothesis before refinement
  Conic normalized_conic;          // refined conic in `frame`
  Conic normalized_hypothesis;     // best hypothesis conic in `frame`
  PointNormalization frame;
  std::vector<std::size_t> inliers;  // w.r.t. the returned ellipse
  int iterations = 0;
  bool early_exit = false;
  bool refined = false;
};

std::optional<RansacResult> ransac_ellipse(std::span<const Vec2> points, const RansacConfig& cfg);

}  // namespace portdet

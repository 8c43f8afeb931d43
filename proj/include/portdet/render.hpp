#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "portdet/geometry.hpp"
#include "portdet/image.hpp"

namespace portdet {

using PixelQuad = std::array<Vec2, 4>;

// Empty when any corner is not in front of the camera.
std::optional<PixelQuad> project_quad(const CameraIntrinsics& k, const PortPose& pose, const Quad& quad);

// Inclusive of the boundary; works for either winding.
bool inside_convex(const PixelQuad& q, const Vec2& pt);

// Calls fn(x, y) once per pixel whose centre lies inside a projected
// reflector. Quads overlapping each other are visited once per quad.
template <class Fn>
void for_each_reflector_pixel(const CameraIntrinsics& k, const PortPose& pose, const PortModel& model, Fn&& fn);

// Calls fn(x, y, w) for each pixel touched by a projected reflector, w being
// the fraction of its ss x ss sub-samples inside that quad. ss = 1 visits the
// same pixels as for_each_reflector_pixel with w = 1.
template <class Fn>
void for_each_reflector_coverage(const CameraIntrinsics& k, const PortPose& pose, const PortModel& model, int ss,
                                 Fn&& fn);

// Binary mask of the three projected reflector quads (pixel-centre test).
MaskImage render_reflector_mask(const PortModel& model, const PortPose& pose, const CameraIntrinsics& k);

// Closed polyline of the projected ring with vertices at most max_step px
// apart. Points behind the camera are skipped.
std::vector<Vec2> project_ring(const CameraIntrinsics& k, const PortPose& pose, double ring_radius,
                               double max_step = 0.5);

// Fraction of ss x ss sub-samples per pixel within half_width px of the
// polyline (closed) or inside the quads. ss = 1 samples pixel centres.
MaskImage ring_coverage(const CameraIntrinsics& k, const std::vector<Vec2>& ring, double half_width, int ss);
MaskImage reflector_coverage(const CameraIntrinsics& k, const PortPose& pose, const PortModel& model, int ss);

// ---------------------------------------------------------------------------

template <class Fn>
void for_each_reflector_pixel(const CameraIntrinsics& k, const PortPose& pose, const PortModel& model, Fn&& fn) {
  for (const Quad& quad : model.reflectors) {
    const auto q = project_quad(k, pose, quad);
    if (!q) continue;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const Vec2& c : *q) {
      x0 = std::min(x0, c.x());
      x1 = std::max(x1, c.x());
      y0 = std::min(y0, c.y());
      y1 = std::max(y1, c.y());
    }
    const int xa = std::max(0, static_cast<int>(std::ceil(x0))), xb = std::min(k.width - 1, static_cast<int>(std::floor(x1)));
    const int ya = std::max(0, static_cast<int>(std::ceil(y0))), yb = std::min(k.height - 1, static_cast<int>(std::floor(y1)));
    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x)
        if (inside_convex(*q, Vec2(x, y))) fn(x, y);
  }
}

template <class Fn>
void for_each_reflector_coverage(const CameraIntrinsics& k, const PortPose& pose, const PortModel& model, int ss,
                                 Fn&& fn) {
  if (ss <= 1) {
    for_each_reflector_pixel(k, pose, model, [&fn](int x, int y) { fn(x, y, 1.0); });
    return;
  }
  const double step = 1.0 / ss, origin = 0.5 * step - 0.5, w = 1.0 / (ss * ss);
  constexpr double half_diag = 0.7071067811865476;
  for (const Quad& quad : model.reflectors) {
    const auto q = project_quad(k, pose, quad);
    if (!q) continue;
    // Unit edge normals pointing inward; d(p) = n . p + c.
    double area2 = 0.0;
    for (int i = 0; i < 4; ++i) {
      const Vec2& a = (*q)[i];
      const Vec2& b = (*q)[(i + 1) % 4];
      area2 += a.x() * b.y() - a.y() * b.x();
    }
    if (area2 == 0.0) continue;
    const double sgn = area2 > 0 ? 1.0 : -1.0;
    std::array<Vec2, 4> n;
    std::array<double, 4> c;
    for (int i = 0; i < 4; ++i) {
      const Vec2 e = (*q)[(i + 1) % 4] - (*q)[i];
      const double len = e.norm();
      n[i] = len > 0 ? Vec2(-e.y(), e.x()) * (sgn / len) : Vec2(0, 0);
      c[i] = -n[i].dot((*q)[i]);
    }
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const Vec2& v : *q) {
      x0 = std::min(x0, v.x());
      x1 = std::max(x1, v.x());
      y0 = std::min(y0, v.y());
      y1 = std::max(y1, v.y());
    }
    const int xa = std::max(0, static_cast<int>(std::floor(x0))), xb = std::min(k.width - 1, static_cast<int>(std::ceil(x1)));
    const int ya = std::max(0, static_cast<int>(std::floor(y0))), yb = std::min(k.height - 1, static_cast<int>(std::ceil(y1)));
    for (int y = ya; y <= yb; ++y)
      for (int x = xa; x <= xb; ++x) {
        double dmin = 1e300;
        for (int i = 0; i < 4; ++i) dmin = std::min(dmin, n[i].x() * x + n[i].y() * y + c[i]);
        if (dmin <= -half_diag) continue;
        if (dmin >= half_diag) {
          fn(x, y, 1.0);
          continue;
        }
        int hits = 0;
        for (int j = 0; j < ss; ++j)
          for (int i = 0; i < ss; ++i) hits += inside_convex(*q, Vec2(x + origin + i * step, y + origin + j * step));
        if (hits) fn(x, y, hits * w);
      }
  }
}

}  // namespace portdet

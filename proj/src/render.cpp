#include "portdet/render.hpp"

#include <algorithm>
#include <cmath>

namespace portdet {

std::optional<PixelQuad> project_quad(const CameraIntrinsics& k, const PortPose& pose, const Quad& quad) {
  PixelQuad out;
  for (int i = 0; i < 4; ++i) {
    const auto px = project(k, pose.to_camera(quad[i]));
    if (!px) return std::nullopt;
    out[i] = *px;
  }
  return out;
}

bool inside_convex(const PixelQuad& q, const Vec2& pt) {
  bool pos = false, neg = false;
  for (int i = 0; i < 4; ++i) {
    const Vec2 e = q[(i + 1) % 4] - q[i];
    const Vec2 r = pt - q[i];
    const double c = e.x() * r.y() - e.y() * r.x();
    if (c > 0) pos = true;
    if (c < 0) neg = true;
    if (pos && neg) return false;
  }
  return true;
}

MaskImage render_reflector_mask(const PortModel& model, const PortPose& pose, const CameraIntrinsics& k) {
  MaskImage m(k.width, k.height, 0.0f);
  for_each_reflector_pixel(k, pose, model, [&m](int x, int y) { m.at(x, y) = 1.0f; });
  return m;
}

std::vector<Vec2> project_ring(const CameraIntrinsics& k, const PortPose& pose, double ring_radius, double max_step) {
  // Adaptive count: start from the circle's largest possible image radius.
  const double z_min = std::max(pose.p.z() - ring_radius, 1e-3);
  const double radius_px = std::max(k.fx, k.fy) * ring_radius / z_min;
  const int n = std::clamp(static_cast<int>(std::ceil(2 * kPi * radius_px / max_step)), 64, 1 << 16);
  std::vector<Vec2> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double t = 2 * kPi * i / n;
    if (auto px = project(k, pose.to_camera(Vec3(ring_radius * std::cos(t), ring_radius * std::sin(t), 0))))
      pts.push_back(*px);
  }
  return pts;
}

MaskImage ring_coverage(const CameraIntrinsics& k, const std::vector<Vec2>& ring, double half_width, int ss) {
  const int gw = k.width * ss, gh = k.height * ss;
  const double step = 1.0 / ss, origin = 0.5 * step - 0.5;
  // Sub-sample i sits at origin + i * step in pixel coordinates.
  std::vector<std::uint8_t> hit(static_cast<std::size_t>(gw) * gh, 0);
  const double r2 = half_width * half_width;
  const std::size_t n = ring.size();
  for (std::size_t s = 0; s < n && n > 1; ++s) {
    const Vec2& a = ring[s];
    const Vec2& b = ring[(s + 1) % n];
    const Vec2 ab = b - a;
    const double len2 = std::max(ab.squaredNorm(), 1e-18);
    const double x0 = std::min(a.x(), b.x()) - half_width, x1 = std::max(a.x(), b.x()) + half_width;
    const double y0 = std::min(a.y(), b.y()) - half_width, y1 = std::max(a.y(), b.y()) + half_width;
    const int ia = std::max(0, static_cast<int>(std::ceil((x0 - origin) / step)));
    const int ib = std::min(gw - 1, static_cast<int>(std::floor((x1 - origin) / step)));
    const int ja = std::max(0, static_cast<int>(std::ceil((y0 - origin) / step)));
    const int jb = std::min(gh - 1, static_cast<int>(std::floor((y1 - origin) / step)));
    for (int j = ja; j <= jb; ++j)
      for (int i = ia; i <= ib; ++i) {
        std::uint8_t& h = hit[static_cast<std::size_t>(j) * gw + i];
        if (h) continue;
        const Vec2 p(origin + i * step, origin + j * step);
        const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
        if ((a + t * ab - p).squaredNorm() <= r2) h = 1;
      }
  }
  MaskImage out(k.width, k.height, 0.0f);
  const float w = 1.0f / static_cast<float>(ss * ss);
  for (int j = 0; j < gh; ++j)
    for (int i = 0; i < gw; ++i)
      if (hit[static_cast<std::size_t>(j) * gw + i]) out.at(i / ss, j / ss) += w;
  for (auto& v : out.data) v = std::min(v, 1.0f);
  return out;
}

MaskImage reflector_coverage(const CameraIntrinsics& k, const PortPose& pose, const PortModel& model, int ss) {
  if (ss == 1) return render_reflector_mask(model, pose, k);
  MaskImage out(k.width, k.height, 0.0f);
  for_each_reflector_coverage(k, pose, model, ss, [&out](int x, int y, double w) {
    out.at(x, y) = std::min(1.0f, out.at(x, y) + static_cast<float>(w));
  });
  return out;
}

}  // namespace portdet

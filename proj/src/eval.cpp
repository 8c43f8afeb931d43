#include "portdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "portdet/ellipse.hpp"
#include "portdet/errors.hpp"

namespace portdet {

double position_error(const PortPose& est, const PortPose& gt) { return (est.p - gt.p).norm(); }

double normal_error(const PortPose& est, const PortPose& gt) {
  const double c = std::clamp(est.normal().dot(gt.normal()), -1.0, 1.0);
  return rad2deg(std::acos(c));
}

double rotation_error(const PortPose& est, const PortPose& gt, int order) {
  double best = 180.0;
  for (int k = 0; k < order; ++k)
    best = std::min(best, geodesic_angle(est.R, gt.R * rotation_about_axis(UnitRay(Vec3::UnitZ()), 360.0 * k / order)));
  return best;
}

double yaw_error(const PortPose& est, const PortPose& gt, int order) {
  const Vec3 x = gt.R.transpose() * est.R.col(0);
  const double period = 360.0 / order;
  double yaw = std::fmod(rad2deg(std::atan2(x.y(), x.x())), period);
  if (yaw < 0) yaw += period;
  return std::min(yaw, period - yaw);
}

bool in_fov(const CameraIntrinsics& k, const PortPose& gt) {
  const auto px = project(k, gt.p);
  return px && k.contains(*px);
}

double lower_median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

double rmse(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

Stat summarize(const std::vector<double>& v) { return {lower_median(v), rmse(v), v.size()}; }

DetectionRates detection_rates(const std::vector<FrameResult>& results) {
  const MetricsReport r = aggregate(results);
  return {r.rate_all, r.rate_in_fov};
}

MetricsReport aggregate(const std::vector<FrameResult>& results) {
  MetricsReport r;
  std::vector<double> pos, nrm, rot, rot_raw;
  for (const auto& f : results) {
    if (f.estimate.has_value() == f.abort.has_value())
      throw ConfigError("frame result must carry exactly one of estimate and abort reason");
    ++r.frames;
    r.frames_in_fov += f.in_fov;
    if (!f.estimate) continue;
    ++r.estimated;
    r.estimated_in_fov += f.in_fov;
    pos.push_back(position_error(*f.estimate, f.gt));
    nrm.push_back(normal_error(*f.estimate, f.gt));
    rot.push_back(rotation_error(*f.estimate, f.gt));
    rot_raw.push_back(geodesic_angle(f.estimate->R, f.gt.R));
  }
  r.position = summarize(pos);
  r.normal = summarize(nrm);
  r.rotation = summarize(rot);
  r.rotation_unfolded = summarize(rot_raw);
  r.rate_all = r.frames ? 100.0 * static_cast<double>(r.estimated) / static_cast<double>(r.frames) : 0.0;
  r.rate_in_fov =
      r.frames_in_fov ? 100.0 * static_cast<double>(r.estimated_in_fov) / static_cast<double>(r.frames_in_fov) : 0.0;
  return r;
}

std::string format_report(const MetricsReport& r) {
  char buf[1024];
  std::snprintf(buf, sizeof buf,
                "                          med.      RMSE\n"
                "Position error [m]     %8.4f  %8.4f\n"
                "Normal error [deg]     %8.3f  %8.3f\n"
                "Rotation error [deg]   %8.3f  %8.3f   (order-3 folded)\n"
                "Rotation error [deg]   %8.3f  %8.3f   (unfolded)\n"
                "Detection rate [%%]  all %6.1f   in FoV %6.1f\n"
                "Frames %zu (in FoV %zu), estimated %zu (in FoV %zu)\n",
                r.position.median, r.position.rmse, r.normal.median, r.normal.rmse, r.rotation.median,
                r.rotation.rmse, r.rotation_unfolded.median, r.rotation_unfolded.rmse, r.rate_all, r.rate_in_fov,
                r.frames, r.frames_in_fov, r.estimated, r.estimated_in_fov);
  return buf;
}

std::string report_csv(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "metric,median,rmse,count\n";
  os << "position_m," << r.position.median << ',' << r.position.rmse << ',' << r.position.count << '\n';
  os << "normal_deg," << r.normal.median << ',' << r.normal.rmse << ',' << r.normal.count << '\n';
  os << "rotation_deg," << r.rotation.median << ',' << r.rotation.rmse << ',' << r.rotation.count << '\n';
  os << "rotation_unfolded_deg," << r.rotation_unfolded.median << ',' << r.rotation_unfolded.rmse << ','
     << r.rotation_unfolded.count << '\n';
  os << "detection_all_pct," << r.rate_all << ",," << r.frames << '\n';
  os << "detection_in_fov_pct," << r.rate_in_fov << ",," << r.frames_in_fov << '\n';
  return os.str();
}

std::optional<double> sensitivity_bound(const CameraIntrinsics& k, double nu, double distance,
                                        double inclination_deg, double pixel_noise) {
  if (!(distance > 0.0)) throw ConfigError("distance must be positive");
  if (!(inclination_deg >= 0.0 && inclination_deg <= 80.0)) throw ConfigError("inclination must be in [0, 80] deg");
  if (!(pixel_noise > 0.0)) throw ConfigError("pixel noise must be positive");
  constexpr int kPoints = 360;
  // Principal point at the origin keeps F = 1 well conditioned; the ring
  // centre projects there.
  CameraIntrinsics kc = k;
  kc.cx = kc.cy = 0.0;
  const Vec3 p(0, 0, distance);
  // Fronto-parallel base faces the camera (normal -z); tilt about port x.
  const Mat3 base = rotation_about_axis(UnitRay(Vec3::UnitX()), 180.0);
  // Projected conic of the ring, H^-T diag(1, 1, -nu^2) H^-1, sampled
  // relative to its own centre: the appearance, free of translation.
  auto shape = [&](double incl) -> std::optional<std::vector<Vec2>> {
    const Mat3 r = base * rotation_about_axis(UnitRay(Vec3::UnitX()), incl);
    Mat3 h;
    h << r.col(0), r.col(1), p;
    h = kc.matrix() * h;
    const Mat3 hinv = h.inverse();
    const Mat3 c = hinv.transpose() * Vec3(1, 1, -nu * nu).asDiagonal() * hinv;
    if (!(std::abs(c(2, 2)) > 0)) return std::nullopt;
    const Mat3 cn = c / c(2, 2);
    const Conic q{cn(0, 0), cn(0, 1) + cn(1, 0), cn(1, 1), cn(0, 2) + cn(2, 0), cn(1, 2) + cn(2, 1)};
    const auto e = conic_to_axes(q);
    if (!e) return std::nullopt;
    std::vector<Vec2> pts(kPoints);
    for (int i = 0; i < kPoints; ++i) pts[i] = e->point_at(2 * kPi * i / kPoints) - e->center;
    return pts;
  };
  const auto ref = shape(inclination_deg);
  if (!ref) return std::nullopt;
  auto displacement = [&](double delta) {
    const auto moved = shape(inclination_deg + delta);
    if (!moved) return 1e300;
    double m = 0.0;
    for (int i = 0; i < kPoints; ++i) m = std::max(m, ((*moved)[i] - (*ref)[i]).norm());
    return m;
  };
  double lo = 0.0, hi = 89.0 - inclination_deg;
  if (displacement(hi) < pixel_noise) return std::nullopt;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (displacement(mid) < pixel_noise ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace portdet

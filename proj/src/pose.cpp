#include "portdet/pose.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "portdet/errors.hpp"
#include "portdet/raster.hpp"

namespace portdet {

const char* to_string(RootChoice r) { return r == RootChoice::near ? "near" : "far"; }

RootChoice parse_root_choice(const std::string& s) {
  if (s == "near") return RootChoice::near;
  if (s == "far") return RootChoice::far;
  throw ConfigError("minor root must be `near` or `far`, got `" + s + "`");
}

std::optional<Vec3> estimate_position(const EllipseAxes& e, const CameraIntrinsics& k, double nu) {
  const auto m = e.major_endpoints();
  const Vec3 v1 = back_project(k, m[0]).vec(), v2 = back_project(k, m[1]).vec();
  const double chord = (v2 - v1).norm();
  if (!(chord > 1e-12)) return std::nullopt;
  return Vec3(nu * (v1 + v2) / chord);
}

std::optional<std::array<Vec3, 2>> minor_axis_points(const EllipseAxes& e, const CameraIntrinsics& k, const Vec3& p,
                                                     double nu, RootChoice root) {
  std::array<Vec3, 2> out;
  const auto m = e.minor_endpoints();
  for (int i = 0; i < 2; ++i) {
    const Vec3 v = back_project(k, m[i]).vec();
    const double b = v.dot(p);
    const double disc = b * b - (p.squaredNorm() - nu * nu);
    if (disc < 0) return std::nullopt;
    const double d = root == RootChoice::near ? b - std::sqrt(disc) : b + std::sqrt(disc);
    if (!(d > 0)) return std::nullopt;
    out[i] = d * v;
  }
  return out;
}

std::optional<std::array<Vec3, 2>> normal_candidates(const Vec3& p, const EllipseAxes& e,
                                                     const std::array<Vec3, 2>& minor_points,
                                                     const CameraIntrinsics& k) {
  const auto m = e.major_endpoints();
  const Vec3 major = (back_project(k, m[1]).vec() - back_project(k, m[0]).vec()).normalized();
  std::array<Vec3, 2> out;
  for (int i = 0; i < 2; ++i) {
    const Vec3 minor = minor_points[i] - p;
    Vec3 n = major.cross(minor);
    if (!(n.norm() > 1e-9 * std::max(minor.norm(), 1e-300))) return std::nullopt;
    n.normalize();
    if (n.dot(-p) < 0) n = -n;
    out[i] = n;
  }
  return out;
}

namespace {

// Symmetric 3x3 form of the ellipse in homogeneous pixel coordinates.
Mat3 ellipse_matrix(const EllipseAxes& e) {
  Eigen::Matrix2d rot;
  rot << std::cos(e.theta), -std::sin(e.theta), std::sin(e.theta), std::cos(e.theta);
  const Eigen::Matrix2d a2 = rot * Eigen::Vector2d(1.0 / (e.a * e.a), 1.0 / (e.b * e.b)).asDiagonal() * rot.transpose();
  Mat3 m;
  m.topLeftCorner<2, 2>() = a2;
  m.block<2, 1>(0, 2) = -a2 * e.center;
  m.block<1, 2>(2, 0) = (-a2 * e.center).transpose();
  m(2, 2) = e.center.dot(a2 * e.center) - 1.0;
  return m;
}

// Centre of the section of the cone q by the plane normal to n, scaled so the
// section has radius nu.
std::optional<Vec3> section_center(const Mat3& q, const Vec3& n, double nu) {
  const Vec3 e1 = n.unitOrthogonal(), e2 = n.cross(e1);
  Mat3 h;
  h << e1, e2, -n;
  Mat3 m = h.transpose() * q * h;
  if (m.topLeftCorner<2, 2>().trace() < 0) m = -m;
  const Eigen::Matrix2d m2 = m.topLeftCorner<2, 2>();
  const double det = m2.determinant();
  if (!(det > 0)) return std::nullopt;
  const Vec2 lin = m.block<2, 1>(0, 2);
  const Vec2 c = -m2.inverse() * lin;
  const double r2 = -(m(2, 2) + lin.dot(c)) / std::sqrt(det);
  if (!(r2 > 0)) return std::nullopt;
  Vec3 x = h * Vec3(c.x(), c.y(), 1.0) * (nu / std::sqrt(r2));
  if (x.z() < 0) x = -x;
  return x;
}

double angle_between(const Vec3& a, const Vec3& b) { return std::acos(std::clamp(a.dot(b), -1.0, 1.0)); }

}  // namespace

std::optional<std::array<CirclePose, 2>> circle_poses(const EllipseAxes& e, const CameraIntrinsics& k, double nu) {
  if (!(e.a > 0 && e.b > 0)) return std::nullopt;
  const Mat3 km = k.matrix();
  const Mat3 q = km.transpose() * ellipse_matrix(e) * km;
  const Eigen::SelfAdjointEigenSolver<Mat3> es(q);
  Vec3 l = es.eigenvalues();
  if ((l.array() > 0).count() == 1) l = -l;
  // Ascending: one negative eigenvalue, then two positive ones.
  const double l3 = l(0), l2 = l(1), l1 = l(2);
  if (!(l3 < 0 && l2 > 0)) return std::nullopt;
  const Vec3 v1 = es.eigenvectors().col(2), v3 = es.eigenvectors().col(0);
  const double a = std::sqrt((l1 - l2) / (l1 - l3)), b = std::sqrt((l2 - l3) / (l1 - l3));
  std::array<CirclePose, 2> out;
  for (int i = 0; i < 2; ++i) {
    Vec3 n = ((i == 0 ? -a : a) * v1 + b * v3).normalized();
    const auto p = section_center(q, n, nu);
    if (!p) return std::nullopt;
    if (n.dot(*p) > 0) n = -n;
    out[i] = {*p, n};
  }
  return out;
}

std::array<CirclePose, 2> snap_to_circle_poses(const std::array<Vec3, 2>& normals,
                                               const std::array<CirclePose, 2>& exact) {
  const double straight = angle_between(normals[0], exact[0].normal) + angle_between(normals[1], exact[1].normal);
  const double crossed = angle_between(normals[0], exact[1].normal) + angle_between(normals[1], exact[0].normal);
  if (crossed < straight) return {exact[1], exact[0]};
  return exact;
}

YawResult yaw_search(const MaskImage& reflector_mask, const Vec3& p, const std::array<Vec3, 2>& normals,
                     const PortModel& model, const CameraIntrinsics& k, double step_deg, double floor_fraction) {
  return yaw_search(reflector_mask, std::array<Vec3, 2>{p, p}, normals, model, k, step_deg, floor_fraction);
}

YawResult yaw_search(const MaskImage& reflector_mask, const std::array<Vec3, 2>& centers,
                     const std::array<Vec3, 2>& normals, const PortModel& model, const CameraIntrinsics& k,
                     double step_deg, double floor_fraction) {
  const int steps = static_cast<int>(std::lround(120.0 / step_deg));
  YawResult best;
  double best_area = 0.0;
  bool have = false;
  for (int c = 0; c < 2; ++c) {
    const Mat3 base = align_z_to(UnitRay(normals[c]));
    for (int s = 0; s < steps; ++s) {
      const double yaw = s * step_deg;
      PortPose pose;
      pose.p = centers[c];
      pose.R = base * rotation_about_axis(UnitRay(Vec3::UnitZ()), yaw);
      double score = 0.0, area = 0.0;
      for_each_reflector_pixel(k, pose, model, [&](int x, int y) {
        if (reflector_mask.inside(x, y)) score += reflector_mask.at(x, y);
        area += 1.0;
      });
      if (!have || score > best.score) {
        have = true;
        best.pose = pose;
        best.score = score;
        best.candidate = c;
        best.yaw_deg = yaw;
        best_area = area;
      }
    }
  }
  best.floor = floor_fraction * best_area;
  best.found = have && best.score > 0.0 && best.score >= best.floor;
  return best;
}

void PipelineConfig::validate() const {
  if (gamma_s < 0) throw ConfigError("gamma_s must be non-negative");
  if (!(binarize_threshold > 0.0f && binarize_threshold < 1.0f))
    throw ConfigError("binarize threshold must be in (0, 1)");
  ransac.validate();
  const double n = 120.0 / yaw_step_deg;
  if (!(yaw_step_deg > 0.0) || std::abs(n - std::round(n)) > 1e-9)
    throw ConfigError("yaw step must divide 120 deg");
  if (!(band_tolerance_px > 0.0)) throw ConfigError("band tolerance must be positive");
  if (!(yaw_floor_fraction >= 0.0 && yaw_floor_fraction <= 1.0))
    throw ConfigError("yaw floor fraction must be in [0, 1]");
  if (events_per_histogram < 1) throw ConfigError("events per histogram must be at least 1");
  if (count_clamp < 1) throw ConfigError("count clamp must be at least 1");
  if (!(temporal_threshold_deg > 0.0)) throw ConfigError("temporal threshold must be positive");
  if (!(center_margin_px >= 0.0)) throw ConfigError("center margin must be non-negative");
}

const std::vector<std::string>& PipelineConfig::keys() {
  static const std::vector<std::string> k = {
      "pipeline.gamma_s",       "pipeline.binarize_threshold", "pipeline.center_margin_px", "ransac.max_iterations",
      "ransac.inlier_tolerance", "ransac.min_axis_ratio",      "ransac.seed",               "yaw.step_deg",
      "yaw.floor_fraction",     "events.per_histogram",        "events.count_clamp",        "pose.minor_root",
      "pose.conic_refine",      "pipeline.band_refine",        "pipeline.band_tolerance_px", "temporal.threshold_deg"};
  return k;
}

void PipelineConfig::store(KeyValues& kv) const {
  kv.set("pipeline.gamma_s", std::to_string(gamma_s));
  kv.set("pipeline.binarize_threshold", format_double(binarize_threshold));
  kv.set("pipeline.center_margin_px", format_double(center_margin_px));
  kv.set("ransac.max_iterations", std::to_string(ransac.max_iterations));
  kv.set("ransac.inlier_tolerance", format_double(ransac.inlier_tolerance));
  kv.set("ransac.min_axis_ratio", format_double(ransac.min_axis_ratio));
  kv.set("ransac.seed", std::to_string(ransac.rng_seed));
  kv.set("yaw.step_deg", format_double(yaw_step_deg));
  kv.set("yaw.floor_fraction", format_double(yaw_floor_fraction));
  kv.set("events.per_histogram", std::to_string(events_per_histogram));
  kv.set("events.count_clamp", std::to_string(count_clamp));
  kv.set("pose.minor_root", to_string(minor_root));
  kv.set("pose.conic_refine", conic_refine ? "true" : "false");
  kv.set("pipeline.band_refine", band_refine ? "true" : "false");
  kv.set("pipeline.band_tolerance_px", format_double(band_tolerance_px));
  kv.set("temporal.threshold_deg", format_double(temporal_threshold_deg));
}

PipelineConfig PipelineConfig::load(const KeyValues& kv) {
  PipelineConfig c;
  c.gamma_s = static_cast<int>(kv.get_int("pipeline.gamma_s", c.gamma_s));
  c.binarize_threshold = static_cast<float>(kv.get_double("pipeline.binarize_threshold", c.binarize_threshold));
  c.center_margin_px = kv.get_double("pipeline.center_margin_px", c.center_margin_px);
  c.ransac.max_iterations = static_cast<int>(kv.get_int("ransac.max_iterations", c.ransac.max_iterations));
  c.ransac.inlier_tolerance = kv.get_double("ransac.inlier_tolerance", c.ransac.inlier_tolerance);
  c.ransac.min_axis_ratio = kv.get_double("ransac.min_axis_ratio", c.ransac.min_axis_ratio);
  c.ransac.rng_seed = static_cast<std::uint64_t>(kv.get_int("ransac.seed", 0));
  c.yaw_step_deg = kv.get_double("yaw.step_deg", c.yaw_step_deg);
  c.yaw_floor_fraction = kv.get_double("yaw.floor_fraction", c.yaw_floor_fraction);
  const long long n = kv.get_int("events.per_histogram", static_cast<long long>(c.events_per_histogram));
  if (n < 1) throw ConfigError("events.per_histogram must be at least 1");
  c.events_per_histogram = static_cast<std::size_t>(n);
  c.count_clamp = static_cast<int>(kv.get_int("events.count_clamp", c.count_clamp));
  c.minor_root = parse_root_choice(kv.get_string("pose.minor_root", to_string(c.minor_root)));
  c.conic_refine = kv.get_bool("pose.conic_refine", c.conic_refine);
  c.band_refine = kv.get_bool("pipeline.band_refine", c.band_refine);
  c.band_tolerance_px = kv.get_double("pipeline.band_tolerance_px", c.band_tolerance_px);
  c.temporal_threshold_deg = kv.get_double("temporal.threshold_deg", c.temporal_threshold_deg);
  c.validate();
  return c;
}

const char* to_string(AbortReason r) {
  switch (r) {
    case AbortReason::none: return "none";
    case AbortReason::gate: return "gate";
    case AbortReason::ransac: return "ransac";
    case AbortReason::discriminant: return "discriminant";
    case AbortReason::yaw: return "yaw";
  }
  return "?";
}

namespace {

template <class ReflectorFn>
PoseEstimate run_pipeline(const MaskImage& ring, ReflectorFn&& reflector_mask, const PipelineConfig& cfg,
                          const PortModel& model, const CameraIntrinsics& k) {
  PoseEstimate out;
  const BinaryImage band = binarize(ring, cfg.binarize_threshold);
  const BinaryImage skeleton = skeletonize(band);
  out.skeleton_pixels = count_active(skeleton);
  if (gate(skeleton, cfg.gamma_s) == GateResult::abort) {
    out.abort = AbortReason::gate;
    return out;
  }
  const auto fit = ransac_ellipse(active_pixels(skeleton), cfg.ransac);
  if (!fit) {
    out.abort = AbortReason::ransac;
    return out;
  }
  out.ellipse = fit->ellipse;
  out.inliers = fit->inliers.size();
  if (cfg.band_refine) {
    std::vector<Vec2> near;
    for (const Vec2& px : active_pixels(band))
      if (point_distance(out.ellipse, px) <= cfg.band_tolerance_px) near.push_back(px);
    if (const auto conic = refine_sampson(near)) {
      const auto axes = conic_to_axes(*conic);
      if (axes && axes->b / axes->a >= cfg.ransac.min_axis_ratio) out.ellipse = *axes;
    }
  }
  const Vec2& c = out.ellipse.center;
  const double m = cfg.center_margin_px;
  const auto p = estimate_position(out.ellipse, k, model.ring_radius);
  if (c.x() < -m || c.y() < -m || c.x() > k.width - 1 + m || c.y() > k.height - 1 + m || !p || !(p->z() > 0)) {
    out.abort = AbortReason::ransac;
    return out;
  }
  out.five.p = *p;
  out.five.major_endpoints = out.ellipse.major_endpoints();
  out.five.minor_endpoints = out.ellipse.minor_endpoints();
  const auto minor = minor_axis_points(out.ellipse, k, *p, model.ring_radius, cfg.minor_root);
  if (!minor) {
    out.abort = AbortReason::discriminant;
    return out;
  }
  out.five.minor_points_3d = *minor;
  const auto normals = normal_candidates(*p, out.ellipse, *minor, k);
  if (!normals) {
    out.abort = AbortReason::discriminant;
    return out;
  }
  std::array<Vec3, 2> n = *normals;
  out.five.centers = {*p, *p};
  if (cfg.conic_refine) {
    if (const auto exact = circle_poses(out.ellipse, k, model.ring_radius)) {
      const auto snapped = snap_to_circle_poses(n, *exact);
      for (int i = 0; i < 2; ++i) {
        n[i] = snapped[i].normal;
        out.five.centers[i] = snapped[i].p;
      }
    }
  }
  out.five.normal_a = n[0];
  out.five.normal_b = n[1];
  const YawResult yaw =
      yaw_search(reflector_mask(), out.five.centers, n, model, k, cfg.yaw_step_deg, cfg.yaw_floor_fraction);
  out.score = yaw.score;
  out.pose = yaw.pose;
  if (!yaw.found) out.abort = AbortReason::yaw;
  return out;
}

}  // namespace

PoseEstimate estimate_pose_from_masks(const MaskImage& ring, const MaskImage& reflector, const PipelineConfig& cfg,
                                      const PortModel& model, const CameraIntrinsics& k) {
  return run_pipeline(ring, [&reflector]() -> const MaskImage& { return reflector; }, cfg, model, k);
}

PoseEstimate estimate_pose(const InputFrame& frame, const PipelineConfig& cfg, const PortModel& model,
                           const CameraIntrinsics& k, const FilterPair& filters) {
  if (frame.width != k.width || frame.height != k.height)
    throw ConfigError("frame is " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
                      ", camera expects " + std::to_string(k.width) + "x" + std::to_string(k.height));
  const MaskImage ring = run_filter(filters.ring, frame);
  return run_pipeline(ring, [&]() { return run_filter(filters.reflector, frame); }, cfg, model, k);
}

const char* to_string(TemporalStatus s) {
  switch (s) {
    case TemporalStatus::accepted: return "accepted";
    case TemporalStatus::rejected: return "rejected";
    case TemporalStatus::pending: return "pending";
  }
  return "?";
}

TemporalStatus TemporalFilter::push(const PortPose& pose, std::uint64_t t_us) {
  if (!window_.empty() && geodesic_angle(window_.back().second, pose.R) > threshold_) {
    window_.clear();
    window_.emplace_back(t_us, pose.R);
    return TemporalStatus::rejected;
  }
  window_.emplace_back(t_us, pose.R);
  while (window_.size() > 3) window_.pop_front();
  return window_.size() == 3 ? TemporalStatus::accepted : TemporalStatus::pending;
}

}  // namespace portdet

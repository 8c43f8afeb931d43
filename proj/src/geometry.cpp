#include "portdet/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "portdet/config.hpp"
#include "portdet/errors.hpp"

namespace portdet {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("intrinsics: focal lengths must be positive");
  if (width < 8 || height < 8) throw ConfigError("intrinsics: image must be at least 8x8");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw ConfigError("intrinsics: principal point outside the image");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

CameraIntrinsics default_intrinsics() { return CameraIntrinsics{}; }

CameraIntrinsics read_intrinsics(const std::string& path) {
  const KeyValues kv = KeyValues::read(path);
  kv.reject_unknown({"fx", "fy", "cx", "cy", "width", "height"});
  CameraIntrinsics k;
  k.fx = kv.require_double("fx");
  k.fy = kv.require_double("fy");
  k.cx = kv.require_double("cx");
  k.cy = kv.require_double("cy");
  k.width = static_cast<int>(kv.require_double("width"));
  k.height = static_cast<int>(kv.require_double("height"));
  k.validate();
  return k;
}

void write_intrinsics(const std::string& path, const CameraIntrinsics& k) {
  KeyValues kv;
  kv.set("fx", format_double(k.fx));
  kv.set("fy", format_double(k.fy));
  kv.set("cx", format_double(k.cx));
  kv.set("cy", format_double(k.cy));
  kv.set("width", std::to_string(k.width));
  kv.set("height", std::to_string(k.height));
  kv.write(path);
}

UnitRay::UnitRay(const Vec3& v) : v_(v.normalized()) {}

PortModel PortModel::standard(double ring_radius) {
  PortModel m;
  m.ring_radius = ring_radius;
  const double r = 0.6 * ring_radius;
  const double half_len = 0.15 * ring_radius;
  const double half_wid = 0.06 * ring_radius;
  for (int i = 0; i < 3; ++i) {
    const double a = deg2rad(90.0 + 120.0 * i);
    const Vec3 radial(std::cos(a), std::sin(a), 0.0);
    const Vec3 tangent(-std::sin(a), std::cos(a), 0.0);
    const Vec3 c = r * radial;
    m.reflectors[i] = {c - half_len * tangent - half_wid * radial, c + half_len * tangent - half_wid * radial,
                       c + half_len * tangent + half_wid * radial, c - half_len * tangent + half_wid * radial};
  }
  return m;
}

UnitRay back_project(const CameraIntrinsics& k, const Vec2& pixel) {
  return UnitRay(Vec3((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0));
}

std::optional<Vec2> project(const CameraIntrinsics& k, const Vec3& point) {
  if (!(point.z() > 0.0)) return std::nullopt;
  return Vec2(k.fx * point.x() / point.z() + k.cx, k.fy * point.y() / point.z() + k.cy);
}

double geodesic_angle(const Mat3& ra, const Mat3& rb) {
  const double c = std::clamp(((ra.transpose() * rb).trace() - 1.0) / 2.0, -1.0, 1.0);
  return rad2deg(std::acos(c));
}

Mat3 rotation_about_axis(const UnitRay& axis, double angle_deg) {
  return Eigen::AngleAxisd(deg2rad(angle_deg), axis.vec()).toRotationMatrix();
}

Mat3 align_z_to(const UnitRay& dir) {
  const Vec3 z(0, 0, 1);
  const Vec3& n = dir.vec();
  const Vec3 axis = z.cross(n);
  const double s = axis.norm();
  const double c = z.dot(n);
  if (s < 1e-12) {
    if (c > 0.0) return Mat3::Identity();
    return Eigen::AngleAxisd(kPi, Vec3::UnitX()).toRotationMatrix();
  }
  return Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix();
}

Mat3 orthonormalize(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  return r;
}

}  // namespace portdet

#pragma once

#include <array>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace portdet {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

struct CameraIntrinsics {
  double fx = 330.0;
  double fy = 330.0;
  double cx = 173.0;
  double cy = 130.0;
  int width = 346;
  int height = 260;

  // Throws ConfigError when an invariant is violated.
  void validate() const;
  Mat3 matrix() const;
  bool contains(const Vec2& px) const {
    return px.x() >= -0.5 && px.y() >= -0.5 && px.x() < width - 0.5 && px.y() < height - 0.5;
  }
};

// DAVIS-346-like sensor; configuration, not calibration.
CameraIntrinsics default_intrinsics();

CameraIntrinsics read_intrinsics(const std::string& path);
void write_intrinsics(const std::string& path, const CameraIntrinsics& k);

// Direction in the camera frame, always of unit length.
class UnitRay {
 public:
  // Normalizes v; v must be non-zero.
  explicit UnitRay(const Vec3& v);
  const Vec3& vec() const { return v_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }

 private:
  Vec3 v_;
};

// Rotation maps port-frame coordinates into the camera frame; p is the ring center.
struct PortPose {
  Mat3 R = Mat3::Identity();
  Vec3 p = Vec3(0, 0, 1);

  Vec3 normal() const { return R.col(2); }
  Vec3 to_camera(const Vec3& port_point) const { return R * port_point + p; }
};

using Quad = std::array<Vec3, 4>;

// Ring of radius ring_radius in the z = 0 plane of the port frame, plus three
// reflector rectangles related by 120 degree rotations about +z.
struct PortModel {
  double ring_radius = 0.1;
  std::array<Quad, 3> reflectors{};
  static constexpr int symmetry_order = 3;

  // Reflectors centred at 0.6 ring radii, 0.3 x 0.12 ring radii in size,
  // long side tangential.
  static PortModel standard(double ring_radius = 0.1);
};

UnitRay back_project(const CameraIntrinsics& k, const Vec2& pixel);

// Empty when the point is not strictly in front of the camera.
std::optional<Vec2> project(const CameraIntrinsics& k, const Vec3& point);

// Geodesic distance between two rotations, in degrees, within [0, 180].
double geodesic_angle(const Mat3& ra, const Mat3& rb);

// Rodrigues rotation; angle in degrees.
Mat3 rotation_about_axis(const UnitRay& axis, double angle_deg);

// Smallest rotation taking +z onto the given direction. Antiparallel input
// falls back to a half turn about +x.
Mat3 align_z_to(const UnitRay& dir);

// Re-orthonormalizes a nearly orthonormal matrix (SVD projection onto SO(3)).
Mat3 orthonormalize(const Mat3& m);

}  // namespace portdet

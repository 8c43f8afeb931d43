#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "portdet/geometry.hpp"

namespace portdet {

double position_error(const PortPose& est, const PortPose& gt);
// Angle between the port z-axes, degrees.
double normal_error(const PortPose& est, const PortPose& gt);
// min over k of geodesic_angle(est, gt Rz(360 k / order)), degrees.
double rotation_error(const PortPose& est, const PortPose& gt, int symmetry_order = PortModel::symmetry_order);
// In-plane angle between the x-axes after mapping est into the gt frame,
// folded to [0, 180 / order]. Meaningful when the normals agree.
double yaw_error(const PortPose& est, const PortPose& gt, int symmetry_order = PortModel::symmetry_order);

// GT ring centre projects inside the image.
bool in_fov(const CameraIntrinsics& k, const PortPose& gt);

struct FrameResult {
  std::uint64_t t_us = 0;
  PortPose gt;
  std::optional<PortPose> estimate;
  std::optional<std::string> abort;  // set exactly when estimate is empty
  bool in_fov = true;
};

struct Stat {
  double median = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

struct MetricsReport {
  Stat position;           // m
  Stat normal;             // deg
  Stat rotation;           // deg, symmetry-folded
  Stat rotation_unfolded;  // deg
  double rate_all = 0.0;   // %
  double rate_in_fov = 0.0;
  std::size_t frames = 0;
  std::size_t frames_in_fov = 0;
  std::size_t estimated = 0;
  std::size_t estimated_in_fov = 0;
};

// Lower median for even counts; 0 for an empty set.
double lower_median(std::vector<double> v);
double rmse(const std::vector<double>& v);
Stat summarize(const std::vector<double>& v);

struct DetectionRates {
  double all = 0.0;
  double in_fov = 0.0;
};
DetectionRates detection_rates(const std::vector<FrameResult>& results);

MetricsReport aggregate(const std::vector<FrameResult>& results);

// Table 1 layout.
std::string format_report(const MetricsReport& r);
// metric,median,rmse,count rows plus detection rows.
std::string report_csv(const MetricsReport& r);

// Smallest inclination change (deg) that moves some point of the projected
// ring's ellipse, taken relative to its centre, by pixel_noise px. The ring
// sits on the optical axis at `distance`, tilted by `inclination_deg` about
// the port x-axis; 360 points, 60 bisection steps. Empty when no change up
// to 89 deg total inclination reaches the noise.
std::optional<double> sensitivity_bound(const CameraIntrinsics& k, double nu, double distance,
                                        double inclination_deg, double pixel_noise);

}  // namespace portdet

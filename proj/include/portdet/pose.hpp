#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "portdet/config.hpp"
#include "portdet/ellipse.hpp"
#include "portdet/filters.hpp"
#include "portdet/geometry.hpp"
#include "portdet/image.hpp"
#include "portdet/render.hpp"

namespace portdet {

// Which intersection of a minor-endpoint ray with the nu-sphere about p to
// keep. near: d <= |p|, between the camera and the ring centre. far: the
// other root.
enum class RootChoice { near, far };

const char* to_string(RootChoice r);
RootChoice parse_root_choice(const std::string& s);

struct FiveDof {
  Vec3 p = Vec3::Zero();
  Vec3 normal_a = -Vec3::UnitZ();
  Vec3 normal_b = -Vec3::UnitZ();
  std::array<Vec2, 2> major_endpoints{};
  std::array<Vec2, 2> minor_endpoints{};
  std::array<Vec3, 2> minor_points_3d{};
  // Per-candidate ring centre; both equal p unless conic refinement is on.
  std::array<Vec3, 2> centers{};
};

// p = nu (v1 + v2) / |v2 - v1| from the major-axis endpoint rays. Empty when
// the rays coincide.
std::optional<Vec3> estimate_position(const EllipseAxes& e, const CameraIntrinsics& k, double nu);

// Solves d^2 - 2 d (v.p) + |p|^2 - nu^2 = 0 for each minor endpoint ray.
// Empty on a negative discriminant.
std::optional<std::array<Vec3, 2>> minor_axis_points(const EllipseAxes& e, const CameraIntrinsics& k, const Vec3& p,
                                                     double nu, RootChoice root = RootChoice::near);

// normal_k = normalize(major_3d x (x_k - p)), flipped so that n.(-p) >= 0.
// Empty when a cross product vanishes.
std::optional<std::array<Vec3, 2>> normal_candidates(const Vec3& p, const EllipseAxes& e,
                                                     const std::array<Vec3, 2>& minor_points,
                                                     const CameraIntrinsics& k);

struct CirclePose {
  Vec3 p = Vec3::Zero();
  Vec3 normal = -Vec3::UnitZ();
};

// Exact poses of a circle of radius nu projecting to e: the two circular
// sections of the back-projected cone, normals facing the camera. Empty when
// the cone is degenerate.
std::optional<std::array<CirclePose, 2>> circle_poses(const EllipseAxes& e, const CameraIntrinsics& k, double nu);

// Pairs each candidate normal with one exact pose, minimizing the summed
// angle, and returns the exact poses in candidate order.
std::array<CirclePose, 2> snap_to_circle_poses(const std::array<Vec3, 2>& normals,
                                               const std::array<CirclePose, 2>& exact);

struct YawResult {
  bool found = false;
  PortPose pose;
  double score = 0.0;
  int candidate = 0;  // 0 = normal_a, 1 = normal_b
  double yaw_deg = 0.0;
  double floor = 0.0;
};

// Grid search over yaw in [0, 120) for both normals. Score = sum of I_R over
// the projected reflector mask. Ties keep the earlier (candidate, yaw).
// found requires score > 0 and score >= floor_fraction * mask area at the
// winning pose.
YawResult yaw_search(const MaskImage& reflector_mask, const Vec3& p, const std::array<Vec3, 2>& normals,
                     const PortModel& model, const CameraIntrinsics& k, double step_deg = 1.0,
                     double floor_fraction = 0.25);

// Same with a separate centre per candidate.
YawResult yaw_search(const MaskImage& reflector_mask, const std::array<Vec3, 2>& centers,
                     const std::array<Vec3, 2>& normals, const PortModel& model, const CameraIntrinsics& k,
                     double step_deg = 1.0, double floor_fraction = 0.25);

struct PipelineConfig {
  int gamma_s = 30;
  float binarize_threshold = 0.5f;
  RansacConfig ransac;
  double yaw_step_deg = 1.0;
  double yaw_floor_fraction = 0.25;
  std::size_t events_per_histogram = 35000;
  int count_clamp = 5;
  RootChoice minor_root = RootChoice::far;
  // Refit the RANSAC ellipse on every binarized ring pixel within
  // band_tolerance_px of it (Sampson-weighted), before pose recovery.
  bool band_refine = true;
  double band_tolerance_px = 3.0;
  // Snap the two candidates to the exact circle poses of the fitted ellipse.
  bool conic_refine = true;
  double temporal_threshold_deg = 15.0;
  // Ellipse centres further than this outside the image abort the frame.
  double center_margin_px = 20.0;

  void validate() const;
  void store(KeyValues& kv) const;
  static PipelineConfig load(const KeyValues& kv);
  static const std::vector<std::string>& keys();
};

enum class AbortReason { none, gate, ransac, discriminant, yaw };
const char* to_string(AbortReason r);

struct PoseEstimate {
  AbortReason abort = AbortReason::none;
  PortPose pose;
  double score = 0.0;
  FiveDof five;
  EllipseAxes ellipse;
  std::size_t skeleton_pixels = 0;
  std::size_t inliers = 0;

  bool ok() const { return abort == AbortReason::none; }
};

struct FilterPair {
  FilterKind ring = FilterKind::classical(FilterTarget::ring);
  FilterKind reflector = FilterKind::classical(FilterTarget::reflector);
};

// Pipeline from the two filter outputs onwards.
PoseEstimate estimate_pose_from_masks(const MaskImage& ring, const MaskImage& reflector, const PipelineConfig& cfg,
                                      const PortModel& model, const CameraIntrinsics& k);

// Full pipeline: filters, then estimate_pose_from_masks. The reflector filter
// only runs when the ring stage succeeds.
PoseEstimate estimate_pose(const InputFrame& frame, const PipelineConfig& cfg, const PortModel& model,
                           const CameraIntrinsics& k, const FilterPair& filters);

enum class TemporalStatus { accepted, rejected, pending };
const char* to_string(TemporalStatus s);

// Accepts a pose once it and the two before it are each within the
// threshold of their predecessor. A pose that jumps by more is rejected and
// starts a new window on its own.
class TemporalFilter {
 public:
  explicit TemporalFilter(double threshold_deg = 15.0) : threshold_(threshold_deg) {}

  TemporalStatus push(const PortPose& pose, std::uint64_t t_us);
  // Called for aborted frames: consecutive estimates are broken.
  void reset() { window_.clear(); }
  std::size_t size() const { return window_.size(); }

 private:
  double threshold_;
  std::deque<std::pair<std::uint64_t, Mat3>> window_;
};

}  // namespace portdet

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "portdet/config.hpp"
#include "portdet/events.hpp"
#include "portdet/geometry.hpp"
#include "portdet/image.hpp"

namespace portdet {

enum class TrajectoryKind { approach, orbit, tumble };

const char* to_string(TrajectoryKind k);
TrajectoryKind parse_trajectory_kind(const std::string& s);

// Inclination is the angle between the port normal and the line of sight
// back to the camera; tilt_azimuth sets the direction of that tilt.
//   approach: distance goes linearly from start to end, attitude fixed
//             apart from yaw_rate.
//   orbit:    distance fixed, the port turns about the line of sight at
//             angular_rate, so the normal precesses around it.
//   tumble:   distance and normal fixed, yaw turns at angular_rate.
// The seed draws the line of sight (up to max_off_axis from the optical
// axis), the initial yaw and the tilt azimuth.
struct Trajectory {
  TrajectoryKind kind = TrajectoryKind::approach;
  double duration_s = 10.0;
  double rate_hz = 10.0;
  double start_distance = 1.5;
  double end_distance = 0.3;
  double distance = 0.6;
  double inclination_deg = 30.0;
  double angular_rate_dps = 10.0;
  double yaw_rate_dps = 0.0;
  double max_off_axis_deg = 5.0;
  std::uint64_t seed = 0;

  // Throws ConfigError, including when a pose would leave z > 0.
  void validate() const;
  int frame_count() const;
  std::uint64_t timestamp_us(int i) const;
  PortPose pose_at(double t_s) const;

  void store(KeyValues& kv, const std::string& prefix = "trajectory.") const;
  static Trajectory load(const KeyValues& kv, const std::string& prefix = "trajectory.");
};

struct TimedPose {
  std::uint64_t t_us = 0;
  PortPose pose;
};

std::vector<TimedPose> sample_trajectory(const Trajectory& t);

// Builds the pose with the given line of sight, inclination, tilt azimuth
// and yaw about the normal (yaw zero as in align_z_to).
PortPose make_pose(const Vec3& position, double inclination_deg, double tilt_azimuth_deg, double yaw_deg);

// Angle between the normal and the direction from the port to the camera.
double inclination_deg(const PortPose& pose);

struct SceneConfig {
  double background = 0.1;
  double ring_brightness = 0.9;
  double reflector_brightness = 1.0;
  double texture_amplitude = 0.0;
  double noise_sigma = 0.0;
  double saturation = 1.0;
  int distractor_edges = 0;
  double distractor_brightness = 0.8;
  bool show_port = true;
  std::uint64_t seed = 0;  // texture layout

  void validate() const;
  void store(KeyValues& kv, const std::string& prefix = "scene.") const;
  static SceneConfig load(const KeyValues& kv, const std::string& prefix = "scene.");
};

// Grayscale frame: background and texture, the ring band (1 px each side of
// the projected circle), filled reflectors, random distractor line segments,
// Gaussian noise, clipping at the saturation level. 2x2 supersampled.
InputFrame render_frame(const PortPose& pose, const PortModel& model, const CameraIntrinsics& k,
                        const SceneConfig& scene, std::mt19937_64& rng);

struct GtMasks {
  MaskImage ring;
  MaskImage reflector;
};

// Pixel-centre masks: ring band pixels within 1 px of the projected circle,
// reflector pixels inside the projected quads.
GtMasks render_gt_masks(const PortPose& pose, const PortModel& model, const CameraIntrinsics& k);

InputFrame to_rgb(const InputFrame& gray);

void write_poses_csv(const std::string& path, const std::vector<TimedPose>& poses);
std::vector<TimedPose> read_poses_csv(const std::string& path);

struct DatasetOptions {
  bool with_events = false;
  EventSimConfig events;
  // Rendered sub-frames per frame interval fed to the event simulator.
  int event_substeps = 4;
};

// Everything generate_dataset depends on, in manifest key form. Camera keys
// default to default_intrinsics().
struct DatasetConfig {
  Trajectory trajectory;
  SceneConfig scene;
  double ring_radius = 0.1;
  CameraIntrinsics camera = default_intrinsics();
  DatasetOptions options;

  void store(KeyValues& kv) const;
  // Rejects keys outside keys() naming the first offender.
  static DatasetConfig load(const KeyValues& kv);
  static std::vector<std::string> keys();
};

// Writes frames/NNNNN.pgm, masks/ring_NNNNN.pgm, masks/reflector_NNNNN.pgm,
// poses.csv, camera.txt, manifest.txt and, with events, events.bin. Frame
// i depends only on the configs and i.
void generate_dataset(const Trajectory& traj, const SceneConfig& scene, const PortModel& model,
                      const CameraIntrinsics& k, const std::string& out_dir, const DatasetOptions& opts);

void generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);

// Re-runs generation from a manifest written by generate_dataset.
void generate_from_manifest(const std::string& manifest_path, const std::string& out_dir);

std::string frame_name(int i);
std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace portdet

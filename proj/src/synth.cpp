#include "portdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "portdet/errors.hpp"
#include "portdet/render.hpp"

namespace portdet {

namespace fs = std::filesystem;

namespace {

struct TrajectoryDraw {
  Vec3 line_of_sight;
  double yaw0;
  double tilt_az0;
};

TrajectoryDraw draw(const Trajectory& t) {
  std::mt19937_64 rng(t.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double alpha = deg2rad(t.max_off_axis_deg) * std::sqrt(u01(rng));
  const double beta = 2 * kPi * u01(rng);
  TrajectoryDraw d;
  d.line_of_sight = Vec3(std::sin(alpha) * std::cos(beta), std::sin(alpha) * std::sin(beta), std::cos(alpha));
  d.yaw0 = 360.0 * u01(rng);
  d.tilt_az0 = 360.0 * u01(rng);
  return d;
}

void check_level(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("scene ") + name + " must be in [0, 1]");
}

// Smooth panel texture, fixed in the image so a static camera sees none of it move.
MaskImage texture(const CameraIntrinsics& k, const SceneConfig& s) {
  MaskImage t(k.width, k.height, static_cast<float>(s.background));
  if (s.texture_amplitude <= 0.0) return t;
  std::mt19937_64 rng(frame_seed(s.seed, 0x7e47));
  std::uniform_real_distribution<double> period(25.0, 120.0), angle(0.0, 2 * kPi);
  constexpr int kWaves = 4;
  double fx[kWaves], fy[kWaves], ph[kWaves];
  for (int i = 0; i < kWaves; ++i) {
    const double p = period(rng), a = angle(rng);
    fx[i] = 2 * kPi * std::cos(a) / p;
    fy[i] = 2 * kPi * std::sin(a) / p;
    ph[i] = angle(rng);
  }
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      double v = 0.0;
      for (int i = 0; i < kWaves; ++i) v += std::sin(fx[i] * x + fy[i] * y + ph[i]);
      t.at(x, y) = static_cast<float>(s.background + s.texture_amplitude * v / kWaves);
    }
  return t;
}

void blend(MaskImage& img, const MaskImage& coverage, double level) {
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const float c = coverage.data[i];
    if (c > 0.0f) img.data[i] = img.data[i] * (1.0f - c) + static_cast<float>(level) * c;
  }
}

InputFrame render_impl(const PortPose& pose, const PortModel& model, const CameraIntrinsics& k,
                       const SceneConfig& scene, std::mt19937_64* rng) {
  MaskImage img = texture(k, scene);
  if (scene.show_port && pose.p.z() > 0) {
    blend(img, ring_coverage(k, project_ring(k, pose, model.ring_radius), 1.0, 2), scene.ring_brightness);
    blend(img, reflector_coverage(k, pose, model, 2), scene.reflector_brightness);
  }
  if (rng) {
    std::uniform_real_distribution<double> ux(-20.0, k.width + 20.0), uy(-20.0, k.height + 20.0);
    for (int i = 0; i < scene.distractor_edges; ++i) {
      const std::vector<Vec2> seg = {Vec2(ux(*rng), uy(*rng)), Vec2(ux(*rng), uy(*rng))};
      blend(img, ring_coverage(k, seg, 0.6, 2), scene.distractor_brightness);
    }
    if (scene.noise_sigma > 0.0) {
      std::normal_distribution<float> noise(0.0f, static_cast<float>(scene.noise_sigma));
      for (auto& v : img.data) v += noise(*rng);
    }
  }
  InputFrame f(k.width, k.height, 1);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    f.data[i] = std::clamp(std::min(img.data[i], static_cast<float>(scene.saturation)), 0.0f, 1.0f);
  return f;
}

MaskImage as_mask(const InputFrame& f) {
  MaskImage m(f.width, f.height);
  m.data.assign(f.data.begin(), f.data.begin() + static_cast<std::ptrdiff_t>(m.size()));
  return m;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::approach: return "approach";
    case TrajectoryKind::orbit: return "orbit";
    case TrajectoryKind::tumble: return "tumble";
  }
  return "?";
}

TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "approach") return TrajectoryKind::approach;
  if (s == "orbit") return TrajectoryKind::orbit;
  if (s == "tumble") return TrajectoryKind::tumble;
  throw ConfigError("unknown trajectory kind `" + s + "`");
}

void Trajectory::validate() const {
  if (!(duration_s > 0.0) || !(rate_hz > 0.0)) throw ConfigError("trajectory duration and rate must be positive");
  if (frame_count() < 1) throw ConfigError("trajectory has no frames");
  if (!(inclination_deg >= 0.0 && inclination_deg < 89.0)) throw ConfigError("inclination must be in [0, 89) deg");
  if (!(max_off_axis_deg >= 0.0 && max_off_axis_deg < 80.0))
    throw ConfigError("off-axis angle must be in [0, 80) deg, or the port leaves z > 0");
  if (kind == TrajectoryKind::approach) {
    if (!(start_distance > 0.0 && end_distance > 0.0)) throw ConfigError("approach distances must be positive");
  } else if (!(distance > 0.0)) {
    throw ConfigError("trajectory distance must be positive");
  }
  if (!std::isfinite(angular_rate_dps) || !std::isfinite(yaw_rate_dps)) throw ConfigError("rates must be finite");
}

int Trajectory::frame_count() const { return static_cast<int>(std::llround(duration_s * rate_hz)); }

std::uint64_t Trajectory::timestamp_us(int i) const {
  return static_cast<std::uint64_t>(std::llround(1e6 * i / rate_hz));
}

PortPose Trajectory::pose_at(double t) const {
  const TrajectoryDraw d = draw(*this);
  double dist = distance, yaw = d.yaw0 + yaw_rate_dps * t;
  switch (kind) {
    case TrajectoryKind::approach:
      dist = start_distance + (end_distance - start_distance) * std::clamp(t / duration_s, 0.0, 1.0);
      break;
    case TrajectoryKind::orbit:
      break;
    case TrajectoryKind::tumble:
      yaw += angular_rate_dps * t;
      break;
  }
  PortPose pose = make_pose(dist * d.line_of_sight, inclination_deg, d.tilt_az0, yaw);
  // Orbit: the whole port turns rigidly about the line of sight.
  if (kind == TrajectoryKind::orbit)
    pose.R = rotation_about_axis(UnitRay(d.line_of_sight), angular_rate_dps * t) * pose.R;
  return pose;
}

void Trajectory::store(KeyValues& kv, const std::string& p) const {
  kv.set(p + "kind", to_string(kind));
  kv.set(p + "duration_s", format_double(duration_s));
  kv.set(p + "rate_hz", format_double(rate_hz));
  kv.set(p + "start_distance", format_double(start_distance));
  kv.set(p + "end_distance", format_double(end_distance));
  kv.set(p + "distance", format_double(distance));
  kv.set(p + "inclination_deg", format_double(inclination_deg));
  kv.set(p + "angular_rate_dps", format_double(angular_rate_dps));
  kv.set(p + "yaw_rate_dps", format_double(yaw_rate_dps));
  kv.set(p + "max_off_axis_deg", format_double(max_off_axis_deg));
  kv.set(p + "seed", std::to_string(seed));
}

Trajectory Trajectory::load(const KeyValues& kv, const std::string& p) {
  Trajectory t;
  t.kind = parse_trajectory_kind(kv.get_string(p + "kind", to_string(t.kind)));
  t.duration_s = kv.get_double(p + "duration_s", t.duration_s);
  t.rate_hz = kv.get_double(p + "rate_hz", t.rate_hz);
  t.start_distance = kv.get_double(p + "start_distance", t.start_distance);
  t.end_distance = kv.get_double(p + "end_distance", t.end_distance);
  t.distance = kv.get_double(p + "distance", t.distance);
  t.inclination_deg = kv.get_double(p + "inclination_deg", t.inclination_deg);
  t.angular_rate_dps = kv.get_double(p + "angular_rate_dps", t.angular_rate_dps);
  t.yaw_rate_dps = kv.get_double(p + "yaw_rate_dps", t.yaw_rate_dps);
  t.max_off_axis_deg = kv.get_double(p + "max_off_axis_deg", t.max_off_axis_deg);
  t.seed = static_cast<std::uint64_t>(kv.get_int(p + "seed", 0));
  t.validate();
  return t;
}

std::vector<TimedPose> sample_trajectory(const Trajectory& t) {
  t.validate();
  std::vector<TimedPose> out;
  const int n = t.frame_count();
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back({t.timestamp_us(i), t.pose_at(i / t.rate_hz)});
  return out;
}

PortPose make_pose(const Vec3& position, double incl_deg, double tilt_az_deg, double yaw_deg) {
  const Vec3 los = -position.normalized();
  Vec3 u = Vec3::UnitX() - Vec3::UnitX().dot(los) * los;
  if (u.norm() < 1e-9) u = Vec3::UnitY() - Vec3::UnitY().dot(los) * los;
  u.normalize();
  const Vec3 v = los.cross(u);
  const double inc = deg2rad(incl_deg), az = deg2rad(tilt_az_deg);
  const Vec3 n = std::cos(inc) * los + std::sin(inc) * (std::cos(az) * u + std::sin(az) * v);
  PortPose pose;
  pose.p = position;
  pose.R = align_z_to(UnitRay(n)) * rotation_about_axis(UnitRay(Vec3::UnitZ()), yaw_deg);
  return pose;
}

double inclination_deg(const PortPose& pose) {
  const double c = pose.normal().dot(-pose.p.normalized());
  return rad2deg(std::acos(std::clamp(c, -1.0, 1.0)));
}

void SceneConfig::validate() const {
  check_level(background, "background");
  check_level(ring_brightness, "ring_brightness");
  check_level(reflector_brightness, "reflector_brightness");
  check_level(texture_amplitude, "texture_amplitude");
  check_level(noise_sigma, "noise_sigma");
  check_level(saturation, "saturation");
  check_level(distractor_brightness, "distractor_brightness");
  if (distractor_edges < 0) throw ConfigError("distractor_edges must be non-negative");
}

void SceneConfig::store(KeyValues& kv, const std::string& p) const {
  kv.set(p + "background", format_double(background));
  kv.set(p + "ring_brightness", format_double(ring_brightness));
  kv.set(p + "reflector_brightness", format_double(reflector_brightness));
  kv.set(p + "texture_amplitude", format_double(texture_amplitude));
  kv.set(p + "noise_sigma", format_double(noise_sigma));
  kv.set(p + "saturation", format_double(saturation));
  kv.set(p + "distractor_edges", std::to_string(distractor_edges));
  kv.set(p + "distractor_brightness", format_double(distractor_brightness));
  kv.set(p + "show_port", show_port ? "true" : "false");
  kv.set(p + "seed", std::to_string(seed));
}

SceneConfig SceneConfig::load(const KeyValues& kv, const std::string& p) {
  SceneConfig s;
  s.background = kv.get_double(p + "background", s.background);
  s.ring_brightness = kv.get_double(p + "ring_brightness", s.ring_brightness);
  s.reflector_brightness = kv.get_double(p + "reflector_brightness", s.reflector_brightness);
  s.texture_amplitude = kv.get_double(p + "texture_amplitude", s.texture_amplitude);
  s.noise_sigma = kv.get_double(p + "noise_sigma", s.noise_sigma);
  s.saturation = kv.get_double(p + "saturation", s.saturation);
  s.distractor_edges = static_cast<int>(kv.get_int(p + "distractor_edges", s.distractor_edges));
  s.distractor_brightness = kv.get_double(p + "distractor_brightness", s.distractor_brightness);
  s.show_port = kv.get_bool(p + "show_port", s.show_port);
  s.seed = static_cast<std::uint64_t>(kv.get_int(p + "seed", 0));
  s.validate();
  return s;
}

InputFrame render_frame(const PortPose& pose, const PortModel& model, const CameraIntrinsics& k,
                        const SceneConfig& scene, std::mt19937_64& rng) {
  return render_impl(pose, model, k, scene, &rng);
}

GtMasks render_gt_masks(const PortPose& pose, const PortModel& model, const CameraIntrinsics& k) {
  if (!(pose.p.z() > 0)) throw ConfigError("ground-truth pose must be in front of the camera");
  return {ring_coverage(k, project_ring(k, pose, model.ring_radius), 1.0, 1), render_reflector_mask(model, pose, k)};
}

InputFrame to_rgb(const InputFrame& gray) {
  if (gray.channels == 3) return gray;
  InputFrame f(gray.width, gray.height, 3);
  const std::size_t n = static_cast<std::size_t>(gray.width) * gray.height;
  for (int c = 0; c < 3; ++c) std::copy(gray.data.begin(), gray.data.begin() + n, f.data.begin() + c * n);
  return f;
}

void write_poses_csv(const std::string& path, const std::vector<TimedPose>& poses) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "timestamp_us,tx,ty,tz,qw,qx,qy,qz\n";
  for (const auto& tp : poses) {
    const Eigen::Quaterniond q(tp.pose.R);
    f << tp.t_us << ',' << format_double(tp.pose.p.x()) << ',' << format_double(tp.pose.p.y()) << ','
      << format_double(tp.pose.p.z()) << ',' << format_double(q.w()) << ',' << format_double(q.x()) << ','
      << format_double(q.y()) << ',' << format_double(q.z()) << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

std::vector<TimedPose> read_poses_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<TimedPose> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("timestamp", 0) == 0)) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 8) throw FormatError(path + ":" + std::to_string(lineno) + ": expected 8 columns");
    try {
      TimedPose tp;
      tp.t_us = std::stoull(cells[0]);
      tp.pose.p = Vec3(std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]));
      Eigen::Quaterniond q(std::stod(cells[4]), std::stod(cells[5]), std::stod(cells[6]), std::stod(cells[7]));
      if (q.norm() < 1e-9) throw FormatError("zero quaternion");
      tp.pose.R = q.normalized().toRotationMatrix();
      out.push_back(tp);
    } catch (const std::logic_error&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

std::string frame_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", i);
  return buf;
}

std::uint64_t frame_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over a mixed pair.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void generate_dataset(const Trajectory& traj, const SceneConfig& scene, const PortModel& model,
                      const CameraIntrinsics& k, const std::string& out_dir, const DatasetOptions& opts) {
  traj.validate();
  scene.validate();
  k.validate();
  if (opts.with_events) {
    opts.events.validate();
    if (opts.event_substeps < 1) throw ConfigError("event_substeps must be at least 1");
  }
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "frames", ec);
  fs::create_directories(fs::path(out_dir) / "masks", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  const auto poses = sample_trajectory(traj);
  const std::uint64_t base = frame_seed(traj.seed, scene.seed);
  for (int i = 0; i < static_cast<int>(poses.size()); ++i) {
    std::mt19937_64 rng(frame_seed(base, static_cast<std::uint64_t>(i)));
    const auto& pose = poses[i].pose;
    write_pgm((fs::path(out_dir) / "frames" / (frame_name(i) + ".pgm")).string(),
              as_mask(render_frame(pose, model, k, scene, rng)));
    const GtMasks gt = render_gt_masks(pose, model, k);
    write_pgm((fs::path(out_dir) / "masks" / ("ring_" + frame_name(i) + ".pgm")).string(), gt.ring);
    write_pgm((fs::path(out_dir) / "masks" / ("reflector_" + frame_name(i) + ".pgm")).string(), gt.reflector);
  }
  write_poses_csv((fs::path(out_dir) / "poses.csv").string(), poses);
  write_intrinsics((fs::path(out_dir) / "camera.txt").string(), k);

  if (opts.with_events) {
    // Events come from the clean render; sensor noise is the simulator's.
    std::mt19937_64 erng(frame_seed(base, 0xe5e5e5));
    EventStream stream;
    stream.width = k.width;
    stream.height = k.height;
    EventSimulator sim(as_mask(render_impl(poses.front().pose, model, k, scene, nullptr)), opts.events);
    const double dt = 1.0 / traj.rate_hz;
    for (std::size_t i = 0; i + 1 < poses.size(); ++i)
      for (int s = 1; s <= opts.event_substeps; ++s) {
        const double t0 = (i + (s - 1.0) / opts.event_substeps) * dt, t1 = (i + static_cast<double>(s) / opts.event_substeps) * dt;
        const auto ta = static_cast<std::uint64_t>(std::llround(t0 * 1e6));
        const auto tb = static_cast<std::uint64_t>(std::llround(t1 * 1e6));
        const MaskImage next = as_mask(render_impl(traj.pose_at(t1), model, k, scene, nullptr));
        auto ev = sim.step(next, ta, tb, erng);
        stream.events.insert(stream.events.end(), ev.begin(), ev.end());
      }
    write_events((fs::path(out_dir) / "events.bin").string(), stream);
  }

  DatasetConfig cfg{traj, scene, model.ring_radius, k, opts};
  KeyValues m;
  cfg.store(m);
  m.set("dataset.frames", std::to_string(poses.size()));
  m.write((fs::path(out_dir) / "manifest.txt").string());
}

void DatasetConfig::store(KeyValues& m) const {
  m.set("format", "portdet-dataset");
  m.set("format_version", "1");
  trajectory.store(m);
  scene.store(m);
  m.set("port.ring_radius", format_double(ring_radius));
  m.set("camera.fx", format_double(camera.fx));
  m.set("camera.fy", format_double(camera.fy));
  m.set("camera.cx", format_double(camera.cx));
  m.set("camera.cy", format_double(camera.cy));
  m.set("camera.width", std::to_string(camera.width));
  m.set("camera.height", std::to_string(camera.height));
  m.set("dataset.with_events", options.with_events ? "true" : "false");
  m.set("events.contrast", format_double(options.events.contrast));
  m.set("events.epsilon", format_double(options.events.epsilon));
  m.set("events.noise_rate_hz", format_double(options.events.noise_rate_hz));
  m.set("events.substeps", std::to_string(options.event_substeps));
}

std::vector<std::string> DatasetConfig::keys() {
  KeyValues kv;
  DatasetConfig{}.store(kv);
  std::vector<std::string> out;
  for (const auto& [key, value] : kv.entries()) out.push_back(key);
  out.push_back("dataset.frames");
  return out;
}

DatasetConfig DatasetConfig::load(const KeyValues& m) {
  m.reject_unknown(keys());
  const std::string format = m.get_string("format", "portdet-dataset");
  if (format != "portdet-dataset") throw ConfigError("format: expected portdet-dataset, got " + format);
  if (m.get_int("format_version", 1) != 1) throw ConfigError("format_version: only version 1 is supported");
  DatasetConfig c;
  c.trajectory = Trajectory::load(m);
  c.scene = SceneConfig::load(m);
  c.ring_radius = m.get_double("port.ring_radius", c.ring_radius);
  if (!(c.ring_radius > 0)) throw ConfigError("port.ring_radius must be positive");
  c.camera.fx = m.get_double("camera.fx", c.camera.fx);
  c.camera.fy = m.get_double("camera.fy", c.camera.fy);
  c.camera.cx = m.get_double("camera.cx", c.camera.cx);
  c.camera.cy = m.get_double("camera.cy", c.camera.cy);
  c.camera.width = static_cast<int>(m.get_int("camera.width", c.camera.width));
  c.camera.height = static_cast<int>(m.get_int("camera.height", c.camera.height));
  c.options.with_events = m.get_bool("dataset.with_events", false);
  c.options.events.contrast = m.get_double("events.contrast", c.options.events.contrast);
  c.options.events.epsilon = m.get_double("events.epsilon", c.options.events.epsilon);
  c.options.events.noise_rate_hz = m.get_double("events.noise_rate_hz", c.options.events.noise_rate_hz);
  c.options.event_substeps = static_cast<int>(m.get_int("events.substeps", c.options.event_substeps));
  return c;
}

void generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  generate_dataset(cfg.trajectory, cfg.scene, PortModel::standard(cfg.ring_radius), cfg.camera, out_dir, cfg.options);
}

void generate_from_manifest(const std::string& manifest_path, const std::string& out_dir) {
  const KeyValues m = KeyValues::read(manifest_path);
  if (m.get_string("format", "") != "portdet-dataset") throw ConfigError(manifest_path + ": not a dataset manifest");
  generate_dataset(DatasetConfig::load(m), out_dir);
}

}  // namespace portdet

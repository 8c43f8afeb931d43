// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ellipse_samples.hpp"
#include "oracles.hpp"
#include "portdet/ellipse.hpp"
#include "portdet/eval.hpp"
#include "portdet/events.hpp"
#include "portdet/filters.hpp"
#include "portdet/pose.hpp"
#include "portdet/render.hpp"
#include "portdet/synth.hpp"

using namespace portdet;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail) {
  std::printf("%s  %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

double angle_deg(const Vec3& a, const Vec3& b) { return rad2deg(std::acos(std::clamp(a.dot(b), -1.0, 1.0))); }

const CameraIntrinsics kCam = default_intrinsics();
const PortModel kModel = PortModel::standard(0.1);

// 1000 random poses through the pipeline on ground-truth masks.
void geometric_exactness() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> depth(0.3, 1.5), incl(0.0, 60.0), ang(0.0, 360.0), off(-0.05, 0.05);
  const PipelineConfig cfg;
  std::vector<double> pos;
  int normal_total = 0, normal_ok = 0, yaw_ok = 0, estimated = 0;
  double worst_yaw = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const double z = depth(rng);
    const PortPose gt = make_pose(Vec3(off(rng) * z, off(rng) * z, z), incl(rng), ang(rng), ang(rng));
    const GtMasks m = render_gt_masks(gt, kModel, kCam);
    const PoseEstimate est = estimate_pose_from_masks(m.ring, m.reflector, cfg, kModel, kCam);
    if (!est.ok()) {
      pos.push_back(1e9);
      continue;
    }
    ++estimated;
    pos.push_back(position_error(est.pose, gt) / gt.p.z());
    if (inclination_deg(gt) >= 10.0) {
      ++normal_total;
      normal_ok += std::min(angle_deg(est.five.normal_a, gt.R.col(2)), angle_deg(est.five.normal_b, gt.R.col(2))) < 2.0;
    }
    const double y = yaw_error(est.pose, gt);
    worst_yaw = std::max(worst_yaw, y);
    yaw_ok += y <= 1.0;
  }
  const double med = lower_median(pos);
  const double secs = seconds_since(start);
  report(med < 0.01, "geometry: position", fmt("median %.4f%% of depth (< 1%%), %d/%d estimated", 100 * med, estimated, n));
  report(normal_ok == normal_total, "geometry: normal candidate",
         fmt("%d/%d poses with inclination >= 10 deg have a candidate within 2 deg", normal_ok, normal_total));
  report(yaw_ok == n, "geometry: yaw", fmt("%d/%d within 1 deg mod 120, worst %.2f deg", yaw_ok, n, worst_yaw));
  report(secs < 60.0, "geometry: runtime", fmt("%.1f s (< 60 s)", secs));
}

void ransac_robustness() {
  int good = 0;
  const int trials = 500;
  for (int trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(7000 + trial);
    EllipseAxes truth;
    truth.center = Vec2(173, 130);
    truth.a = 80;
    truth.b = 50;
    truth.theta = deg2rad(std::uniform_real_distribution<double>(0, 180)(rng));
    const auto pts = samples::noisy_ellipse(truth, 60, 0.5, 60, rng);
    RansacConfig cfg;
    cfg.rng_seed = trial;
    const auto res = ransac_ellipse(pts, cfg);
    if (!res) continue;
    const EllipseAxes& e = res->ellipse;
    good += (e.center - truth.center).norm() <= 0.5 && std::abs(e.a - truth.a) <= 0.01 * truth.a &&
            std::abs(e.b - truth.b) <= 0.01 * truth.b;
  }
  report(good >= 0.95 * trials, "ransac: 50% outliers", fmt("%d/%d trials within 0.5 px / 1%% (>= 95%%)", good, trials));

  EllipseAxes clean;
  clean.center = Vec2(160, 120);
  clean.a = 70;
  clean.b = 40;
  clean.theta = 0.3;
  std::vector<Vec2> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(clean.point_at(2 * kPi * i / 100));
  const auto res = ransac_ellipse(pts, RansacConfig{});
  report(res && res->early_exit && res->iterations == 1, "ransac: early exit",
         fmt("outlier-free input: early_exit=%d after %d iteration(s)", res ? res->early_exit : 0,
             res ? res->iterations : -1));
}

struct SequenceFrame {
  std::uint64_t t_us;
  PortPose gt;
  PoseEstimate est;
};

std::vector<SequenceFrame> run_sequence(const Trajectory& traj, const SceneConfig& scene, double* seconds) {
  const auto poses = sample_trajectory(traj);
  std::vector<InputFrame> frames;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    std::mt19937_64 rng(frame_seed(traj.seed, i));
    frames.push_back(render_frame(poses[i].pose, kModel, kCam, scene, rng));
  }
  const PipelineConfig cfg;
  const FilterPair filters;
  std::vector<SequenceFrame> out;
  const auto start = Clock::now();
  for (std::size_t i = 0; i < poses.size(); ++i)
    out.push_back({poses[i].t_us, poses[i].pose, estimate_pose(frames[i], cfg, kModel, kCam, filters)});
  if (seconds) *seconds = seconds_since(start);
  return out;
}

Trajectory approach_trajectory() {
  Trajectory t;
  t.kind = TrajectoryKind::approach;
  t.duration_s = 10.0;
  t.rate_hz = 10.0;
  t.start_distance = 1.5;
  t.end_distance = 0.3;
  t.inclination_deg = 30.0;
  t.yaw_rate_dps = 6.0;
  t.seed = 77;
  return t;
}

SceneConfig noisy_scene() {
  SceneConfig s;
  s.noise_sigma = 0.03;
  s.texture_amplitude = 0.1;
  s.seed = 5;
  return s;
}

void end_to_end(std::vector<SequenceFrame>& seq) {
  double secs = 0.0;
  seq = run_sequence(approach_trajectory(), noisy_scene(), &secs);
  std::vector<double> pos, nrm, rot;
  int ok = 0;
  for (const auto& f : seq) {
    if (!f.est.ok()) continue;
    ++ok;
    pos.push_back(position_error(f.est.pose, f.gt) / f.gt.p.norm());
    nrm.push_back(normal_error(f.est.pose, f.gt));
    rot.push_back(rotation_error(f.est.pose, f.gt));
  }
  const double mp = lower_median(pos), mn = lower_median(nrm), mr = lower_median(rot);
  const std::string tail = fmt(" (%d/%zu frames estimated)", ok, seq.size());
  report(!pos.empty() && mp <= 0.03, "end-to-end: position", fmt("median %.3f%% of distance (<= 3%%)", 100 * mp) + tail);
  report(!nrm.empty() && mn <= 6.0, "end-to-end: normal", fmt("median %.2f deg (<= 6 deg)", mn) + tail);
  report(!rot.empty() && mr <= 8.0, "end-to-end: rotation", fmt("median folded %.2f deg (<= 8 deg)", mr) + tail);
}

void outlier_filter(const std::vector<SequenceFrame>& seq) {
  // Every tenth estimated frame gets a random orientation.
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g;
  std::vector<FrameResult> clean, raw, filtered;
  TemporalFilter filter;
  int estimated = 0, corrupted = 0;
  for (const auto& f : seq) {
    FrameResult r;
    r.t_us = f.t_us;
    r.gt = f.gt;
    if (!f.est.ok()) {
      filter.reset();
      r.abort = to_string(f.est.abort);
      raw.push_back(r);
      filtered.push_back(r);
      continue;
    }
    r.estimate = f.est.pose;
    clean.push_back(r);
    PortPose p = f.est.pose;
    if (++estimated % 10 == 0) {
      p.R = Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized().toRotationMatrix();
      ++corrupted;
    }
    r.estimate = p;
    raw.push_back(r);
    if (filter.push(p, f.t_us) != TemporalStatus::accepted) {
      r.estimate.reset();
      r.abort = "temporal";
    }
    filtered.push_back(r);
  }
  const MetricsReport a = aggregate(raw), b = aggregate(filtered), c = aggregate(clean);
  const double change = std::abs(b.rotation.median - a.rotation.median) / a.rotation.median;
  report(b.rotation.rmse < a.rotation.rmse, "outlier filter: RMSE",
         fmt("rotation RMSE %.2f -> %.2f deg with %d/%d corrupted", a.rotation.rmse, b.rotation.rmse, corrupted,
             estimated));
  report(change < 0.10, "outlier filter: median",
         fmt("rotation median %.3f -> %.3f deg, %.1f%% change (< 10%%); %.3f deg before corruption",
             a.rotation.median, b.rotation.median, 100 * change, c.rotation.median));
}

void histogram_contract() {
  // Events from a tumbling port plus sensor noise.
  Trajectory t;
  t.kind = TrajectoryKind::tumble;
  t.duration_s = 2.0;
  t.rate_hz = 20.0;
  t.distance = 0.5;
  t.angular_rate_dps = 40.0;
  t.seed = 3;
  const auto poses = sample_trajectory(t);
  SceneConfig scene;
  EventSimConfig ecfg;
  ecfg.noise_rate_hz = 1.0;
  std::mt19937_64 rng(9);
  std::mt19937_64 frame_rng(1);
  EventSimulator sim(render_frame(poses.front().pose, kModel, kCam, scene, frame_rng).luminance(), ecfg);
  EventStream stream;
  stream.width = kCam.width;
  stream.height = kCam.height;
  for (std::size_t i = 1; i < poses.size(); ++i) {
    const MaskImage next = render_frame(poses[i].pose, kModel, kCam, scene, frame_rng).luminance();
    const auto ev = sim.step(next, poses[i - 1].t_us, poses[i].t_us, rng);
    stream.events.insert(stream.events.end(), ev.begin(), ev.end());
  }
  const std::size_t n = kDefaultEventsPerHistogram;
  const auto hist = build_histograms(stream, n);
  bool sums = !hist.empty() && hist.size() == stream.events.size() / n;
  for (const auto& h : hist) sums = sums && h.total() == n;
  EventStream flipped = stream;
  for (auto& e : flipped.events) e.polarity = static_cast<std::int8_t>(-e.polarity);
  const auto hist_f = build_histograms(flipped, n);
  bool same = hist_f.size() == hist.size();
  for (std::size_t i = 0; same && i < hist.size(); ++i) same = hist[i].counts == hist_f[i].counts;
  report(sums, "histograms: mass",
         fmt("%zu events -> %zu histograms, each summing to %zu", stream.events.size(), hist.size(), n));
  report(same, "histograms: polarity", same ? "flipping every polarity leaves all histograms unchanged" : "differs");
}

void sensitivity() {
  const auto b0 = sensitivity_bound(kCam, 0.1, 0.6, 0.0, 1.0);
  const auto b45 = sensitivity_bound(kCam, 0.1, 0.6, 45.0, 1.0);
  const double ratio = b0 && b45 ? *b0 / *b45 : 0.0;
  report(ratio >= 4.5 && ratio <= 18.0, "sensitivity: ratio",
         fmt("bound(0) %.2f deg / bound(45) %.2f deg = %.2f (in [4.5, 18])", b0.value_or(0), b45.value_or(0), ratio));
  bool monotone = true;
  double prev = 1e9;
  for (double inc = 0.0; inc <= 60.0 + 1e-9; inc += 2.5) {
    const auto b = sensitivity_bound(kCam, 0.1, 0.6, inc, 1.0);
    monotone = monotone && b && *b < prev;
    prev = b.value_or(1e9);
  }
  report(monotone, "sensitivity: monotone", "bound strictly decreasing on a 2.5 deg grid over [0, 60] deg");
}

double max_diff(const Tensor& t, const oracle::Field& f) {
  if (t.channels != f.c || t.height != f.h || t.width != f.w) return 1e9;
  double m = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) m = std::max(m, static_cast<double>(std::abs(t.data[i] - f.v[i])));
  return m;
}

InputFrame random_frame(int w, int h, int c, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  InputFrame f(w, h, c);
  for (auto& v : f.data) v = u(rng);
  return f;
}

void cnn_engine() {
  std::mt19937_64 rng(55);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Modality m = trial % 2 ? Modality::rgb : Modality::event;
    std::uniform_int_distribution<int> width(1, 8), side(1, 5);
    CnnWeights w = make_reference_weights(m, FilterTarget::ring, {width(rng), width(rng), width(rng)}, rng());
    for (auto& l : w.layers)
      for (auto& b : l.bias) b = std::uniform_real_distribution<float>(-0.2f, 0.2f)(rng);
    const InputFrame f = random_frame(8 * side(rng), 8 * side(rng), static_cast<int>(m), rng);
    worst = std::max(worst, max_diff(forward(w, Tensor::from_frame(f)), oracle::forward(w, oracle::to_field(Tensor::from_frame(f)))));
  }
  report(worst < 1e-5, "cnn: reference", fmt("20 random networks, max |diff| %.2e vs nested loops (< 1e-5)", worst));

  CnnWeights micro;
  micro.modality = Modality::event;
  Layer conv;
  conv.kind = LayerKind::conv;
  conv.out_channels = conv.in_channels = 1;
  conv.kh = conv.kw = 3;
  conv.padding = 1;
  conv.bias = {-0.5f};
  conv.weights = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f, 0.9f};
  Layer sig;
  sig.kind = LayerKind::sigmoid;
  sig.out_channels = sig.in_channels = 1;
  sig.kh = sig.kw = 1;
  micro.layers = {conv, sig};
  InputFrame f(8, 8, 1, 0.0f);
  f.at(0, 3, 4) = 1.0f;
  f.at(0, 0, 0) = 0.5f;
  const MaskImage out = run_filter(FilterKind::cnn(std::make_shared<CnnWeights>(micro)), f);
  // sigmoid(-0.5 + sum of the kernel taps covering lit pixels), by hand.
  const struct {
    int x, y;
    double v;
  } expect[] = {{3, 4, 0.5},
                {2, 4, 0.52497918747894},
                {3, 3, 0.574442516811659},
                {4, 5, 0.401312339887548},
                {0, 0, 0.43782349911420193},
                {1, 1, 0.389360766050778},
                {7, 7, 0.3775406687981454}};
  double micro_worst = 0.0;
  for (const auto& e : expect) micro_worst = std::max(micro_worst, std::abs(out.at(e.x, e.y) - e.v));
  report(micro_worst < 1e-5, "cnn: micro-network", fmt("max |diff| %.2e vs hand-computed values (< 1e-5)", micro_worst));

  CnnWeights w = make_reference_weights(Modality::event, FilterTarget::ring, {4, 6, 8}, 17);
  for (auto& l : w.layers)
    for (auto& b : l.bias) b = std::uniform_real_distribution<float>(-0.1f, 0.1f)(rng);
  const int n = 96, dx = 8, dy = 16, margin = 32;
  const InputFrame big = random_frame(n + dx, n + dy, 1, rng);
  InputFrame a(n, n, 1), b(n, n, 1);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      a.at(0, x, y) = big.at(0, x + dx, y + dy);
      b.at(0, x, y) = big.at(0, x, y);
    }
  const Tensor oa = forward(w, Tensor::from_frame(a)), ob = forward(w, Tensor::from_frame(b));
  double eq_worst = 0.0;
  for (int y = margin; y < n - margin - dy; ++y)
    for (int x = margin; x < n - margin - dx; ++x)
      eq_worst = std::max(eq_worst, static_cast<double>(std::abs(oa.at(0, y, x) - ob.at(0, y + dy, x + dx))));
  report(eq_worst < 1e-5, "cnn: equivariance",
         fmt("shift (8, 16) on a 96 px input, %d px margin: max |diff| %.2e (< 1e-5)", margin, eq_worst));
}

void throughput() {
  Trajectory t = approach_trajectory();
  t.duration_s = 5.0;
  double secs = 0.0;
  const auto seq = run_sequence(t, noisy_scene(), &secs);
  const double fps = seq.size() / secs;
  report(fps >= 10.0, "throughput", fmt("%.1f frames/s on %dx%d, classical filters, one thread (>= 10)", fps,
                                        kCam.width, kCam.height));
}

void false_positives() {
  SceneConfig scene;
  scene.show_port = false;
  scene.noise_sigma = 0.03;
  scene.texture_amplitude = 0.1;
  scene.distractor_edges = 6;
  const PipelineConfig cfg;
  const FilterPair filters;
  TemporalFilter filter;
  PortPose dummy = make_pose(Vec3(0, 0, 0.6), 0, 0, 0);
  int estimated = 0, accepted = 0;
  std::map<std::string, int> aborts;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(frame_seed(99, i));
    scene.seed = i;
    const PoseEstimate est = estimate_pose(render_frame(dummy, kModel, kCam, scene, rng), cfg, kModel, kCam, filters);
    if (!est.ok()) {
      ++aborts[to_string(est.abort)];
      filter.reset();
      continue;
    }
    ++estimated;
    accepted += filter.push(est.pose, i * 100000ull) == TemporalStatus::accepted;
  }
  std::string why;
  for (const auto& [reason, count] : aborts) why += fmt(", %s %d", reason.c_str(), count);
  report(accepted <= n / 100, "false positives",
         fmt("%d/%d port-free frames accepted (<= 1%%); %d raw estimates%s", accepted, n, estimated, why.c_str()));
}

}  // namespace

int main() {
  std::vector<SequenceFrame> seq;
  geometric_exactness();
  ransac_robustness();
  end_to_end(seq);
  outlier_filter(seq);
  histogram_contract();
  sensitivity();
  cnn_engine();
  throughput();
  false_positives();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

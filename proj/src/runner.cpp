#include "portdet/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "portdet/errors.hpp"
#include "portdet/events.hpp"
#include "portdet/render.hpp"

namespace fs = std::filesystem;

namespace portdet {

const char* to_string(FilterMode m) {
  switch (m) {
    case FilterMode::classical: return "classical";
    case FilterMode::cnn: return "cnn";
    case FilterMode::gt: return "gt";
  }
  return "?";
}

FilterMode parse_filter_mode(const std::string& s) {
  if (s == "classical") return FilterMode::classical;
  if (s == "cnn") return FilterMode::cnn;
  if (s == "gt") return FilterMode::gt;
  throw ConfigError("filter must be classical, cnn or gt, got `" + s + "`");
}

Modality parse_modality(const std::string& s) {
  if (s == "rgb") return Modality::rgb;
  if (s == "event") return Modality::event;
  throw ConfigError("modality must be rgb or event, got `" + s + "`");
}

Dataset Dataset::open(const std::string& dir) {
  const fs::path manifest = fs::path(dir) / "manifest.txt";
  if (!fs::exists(manifest)) throw ConfigError(dir + ": no manifest.txt, not a dataset directory");
  Dataset d;
  d.dir = dir;
  d.config = DatasetConfig::load(KeyValues::read(manifest.string()));
  d.gt = read_poses_csv((fs::path(dir) / "poses.csv").string());
  return d;
}

std::string Dataset::frame_path(int i) const { return (fs::path(dir) / "frames" / (frame_name(i) + ".pgm")).string(); }
std::string Dataset::ring_mask_path(int i) const {
  return (fs::path(dir) / "masks" / ("ring_" + frame_name(i) + ".pgm")).string();
}
std::string Dataset::reflector_mask_path(int i) const {
  return (fs::path(dir) / "masks" / ("reflector_" + frame_name(i) + ".pgm")).string();
}
std::string Dataset::events_path() const { return (fs::path(dir) / "events.bin").string(); }

void EstimateOptions::validate() const {
  pipeline.validate();
  if (jobs < 1) throw ConfigError("--jobs must be at least 1");
  if (filter != FilterMode::cnn) return;
  if (!ring_weights || !reflector_weights)
    throw ConfigError("the cnn filter needs --weights for both the ring and the reflector network");
  for (const auto* w : {ring_weights.get(), reflector_weights.get()})
    if (w->modality != modality)
      throw ConfigError(std::string("weights are for ") + to_string(w->modality) + " input, modality is " +
                        to_string(modality));
  if (ring_weights->target != FilterTarget::ring || reflector_weights->target != FilterTarget::reflector)
    throw ConfigError("weights targets do not match ring/reflector");
}

namespace {

struct Job {
  std::uint64_t t_us = 0;
  int frame_index = 0;
  std::optional<EventHistogram> histogram;
};

PoseEstimate run_one(const Dataset& ds, const EstimateOptions& opts, const Job& job, const PortModel& model,
                     MaskImage* grey_out) {
  const CameraIntrinsics& k = ds.config.camera;
  if (opts.filter == FilterMode::gt) {
    const MaskImage ring = read_pgm(ds.ring_mask_path(job.frame_index));
    const MaskImage refl = read_pgm(ds.reflector_mask_path(job.frame_index));
    if (grey_out)
      *grey_out = job.histogram ? histogram_to_frame(*job.histogram, opts.pipeline.count_clamp).luminance()
                                : read_pgm(ds.frame_path(job.frame_index));
    return estimate_pose_from_masks(ring, refl, opts.pipeline, model, k);
  }
  InputFrame frame = job.histogram ? histogram_to_frame(*job.histogram, opts.pipeline.count_clamp)
                                   : InputFrame::from_mask(read_pgm(ds.frame_path(job.frame_index)));
  if (grey_out) *grey_out = frame.luminance();
  FilterPair filters;
  if (opts.filter == FilterMode::cnn) {
    if (opts.modality == Modality::rgb) frame = to_rgb(frame);
    filters.ring = FilterKind::cnn(opts.ring_weights);
    filters.reflector = FilterKind::cnn(opts.reflector_weights);
  }
  return estimate_pose(frame, opts.pipeline, model, k, filters);
}

}  // namespace

EstimateRun estimate_dataset(const Dataset& ds, const EstimateOptions& opts) {
  opts.validate();
  const auto start = std::chrono::steady_clock::now();
  std::vector<Job> jobs;
  if (opts.modality == Modality::event) {
    const EventStream stream = read_events(ds.events_path());
    if (stream.width != ds.config.camera.width || stream.height != ds.config.camera.height)
      throw ConfigError("event stream sensor size does not match the camera");
    std::map<int, EventHistogram> latest;
    for (auto& h : build_histograms(stream, opts.pipeline.events_per_histogram)) {
      const auto it = std::lower_bound(ds.gt.begin(), ds.gt.end(), h.t_end,
                                       [](const TimedPose& p, std::uint64_t t) { return p.t_us < t; });
      if (it == ds.gt.end()) continue;
      latest[static_cast<int>(it - ds.gt.begin())] = std::move(h);
    }
    for (auto& [i, h] : latest) jobs.push_back({ds.gt[i].t_us, i, std::move(h)});
  } else {
    for (int i = 0; i < static_cast<int>(ds.gt.size()); ++i) jobs.push_back({ds.gt[i].t_us, i, std::nullopt});
  }
  if (!opts.overlay_dir.empty()) {
    std::error_code ec;
    fs::create_directories(opts.overlay_dir, ec);
    if (ec) throw IoError("cannot create " + opts.overlay_dir + ": " + ec.message());
  }

  const PortModel model = PortModel::standard(ds.config.ring_radius);
  EstimateRun run;
  run.frames.resize(jobs.size());
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t j = first; j < jobs.size(); j += stride) {
      MaskImage grey;
      EstimatedFrame& f = run.frames[j];
      f.t_us = jobs[j].t_us;
      f.frame_index = jobs[j].frame_index;
      f.estimate = run_one(ds, opts, jobs[j], model, opts.overlay_dir.empty() ? nullptr : &grey);
      if (!opts.overlay_dir.empty())
        write_ppm((fs::path(opts.overlay_dir) / (frame_name(f.frame_index) + ".ppm")).string(),
                  draw_overlay(grey, f.estimate, model, ds.config.camera));
    }
  };
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(opts.jobs), std::max<std::size_t>(jobs.size(), 1));
  if (n <= 1) {
    work(0, 1);
  } else {
    // Workers only write their own slots; the first exception is rethrown.
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t)
      pool.emplace_back([&, t] {
        try {
          work(t, n);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  apply_temporal_filter(run.frames, opts.pipeline.temporal_threshold_deg);
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

void apply_temporal_filter(std::vector<EstimatedFrame>& frames, double threshold_deg) {
  TemporalFilter filter(threshold_deg);
  for (auto& f : frames) {
    if (!f.estimate.ok()) {
      filter.reset();
      continue;
    }
    f.status = filter.push(f.estimate.pose, f.t_us);
  }
}

void write_estimates_csv(const std::string& path, const std::vector<EstimatedFrame>& frames) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "timestamp_us,status,tx,ty,tz,qw,qx,qy,qz,score,abort_reason\n";
  char buf[512];
  for (const auto& f : frames) {
    if (!f.estimate.ok()) {
      out << f.t_us << ",abort,,,,,,,,," << to_string(f.estimate.abort) << "\n";
      continue;
    }
    const PortPose& p = f.estimate.pose;
    const Eigen::Quaterniond q(p.R);
    std::snprintf(buf, sizeof buf, "%llu,%s,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.6f,\n",
                  static_cast<unsigned long long>(f.t_us), to_string(f.status), p.p.x(), p.p.y(), p.p.z(), q.w(),
                  q.x(), q.y(), q.z(), f.estimate.score);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": bad number `" + s + "`");
  }
}

}  // namespace

std::vector<EstimateRow> read_estimates_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<EstimateRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("timestamp_us", 0) == 0) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const auto c = split_csv(line);
    if (c.size() != 11) throw FormatError(where + ": expected 11 columns, got " + std::to_string(c.size()));
    EstimateRow r;
    r.t_us = static_cast<std::uint64_t>(parse_cell(c[0], where));
    r.status = c[1];
    if (r.status == "abort") {
      r.abort_reason = c[10].empty() ? "unknown" : c[10];
    } else if (r.status == "accepted" || r.status == "pending" || r.status == "rejected") {
      PortPose p;
      p.p = Vec3(parse_cell(c[2], where), parse_cell(c[3], where), parse_cell(c[4], where));
      Eigen::Quaterniond q(parse_cell(c[5], where), parse_cell(c[6], where), parse_cell(c[7], where),
                           parse_cell(c[8], where));
      if (!(q.norm() > 0.5)) throw FormatError(where + ": quaternion is not unit length");
      p.R = q.normalized().toRotationMatrix();
      r.pose = p;
      r.score = parse_cell(c[9], where);
    } else {
      throw FormatError(where + ": unknown status `" + r.status + "`");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<FrameResult> match_estimates(const std::vector<EstimateRow>& rows, const std::vector<TimedPose>& gt,
                                         const CameraIntrinsics& k, bool accepted_only) {
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < gt.size(); ++i) index[gt[i].t_us] = i;
  std::vector<const EstimateRow*> by_gt(gt.size(), nullptr);
  for (const auto& r : rows) {
    const auto it = index.find(r.t_us);
    if (it == index.end())
      throw ConfigError("estimate timestamp " + std::to_string(r.t_us) + " us has no ground-truth pose");
    if (by_gt[it->second]) throw ConfigError("duplicate estimate for timestamp " + std::to_string(r.t_us) + " us");
    by_gt[it->second] = &r;
  }
  std::vector<FrameResult> out(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    FrameResult& f = out[i];
    f.t_us = gt[i].t_us;
    f.gt = gt[i].pose;
    f.in_fov = in_fov(k, gt[i].pose);
    const EstimateRow* r = by_gt[i];
    if (!r) {
      f.abort = "missing";
    } else if (!r->pose) {
      f.abort = r->abort_reason;
    } else if (accepted_only && r->status != "accepted") {
      f.abort = r->status;
    } else {
      f.estimate = r->pose;
    }
  }
  return out;
}

RgbImage draw_overlay(const MaskImage& frame, const PoseEstimate& est, const PortModel& model,
                      const CameraIntrinsics& k) {
  RgbImage img(frame.width, frame.height);
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      const auto v = static_cast<std::uint8_t>(std::lround(255.0f * std::clamp(frame.at(x, y), 0.0f, 1.0f)));
      img.set(x, y, v, v, v);
    }
  if (est.abort == AbortReason::none || est.abort == AbortReason::yaw || est.abort == AbortReason::discriminant) {
    for (int i = 0; i < 720; ++i) {
      const Vec2 pt = est.ellipse.point_at(2.0 * kPi * i / 720.0);
      const int x = static_cast<int>(std::lround(pt.x())), y = static_cast<int>(std::lround(pt.y()));
      if (x >= 0 && y >= 0 && x < img.width && y < img.height) img.set(x, y, 255, 0, 0);
    }
  }
  if (est.ok())
    for_each_reflector_pixel(k, est.pose, model, [&](int x, int y) {
      if (x >= 0 && y >= 0 && x < img.width && y < img.height) img.set(x, y, 0, 255, 0);
    });
  return img;
}

}  // namespace portdet

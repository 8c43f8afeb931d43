// portdet: simulate | estimate | eval | sensitivity.
// Exit codes: 0 ok, 2 configuration or usage, 3 I/O, 4 internal.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "portdet/config.hpp"
#include "portdet/errors.hpp"
#include "portdet/eval.hpp"
#include "portdet/runner.hpp"
#include "portdet/synth.hpp"
#include "portdet/version.hpp"

namespace fs = std::filesystem;
using namespace portdet;

namespace {

using Clock = std::chrono::steady_clock;

// Every value needed to reproduce the run; wall_clock_s is informational.
struct RunManifest {
  KeyValues kv;

  explicit RunManifest(const std::string& command) {
    kv.set("command", command);
    kv.set("toolkit.version", kVersion);
  }
  void set(const std::string& key, const std::string& value) { kv.set(key, value); }
  void merge(const KeyValues& other, const std::string& prefix = "") {
    for (const auto& [k, v] : other.entries()) kv.set(prefix + k, v);
  }
  void write(const std::string& path, Clock::time_point start) {
    kv.set("wall_clock_s", format_double(std::chrono::duration<double>(Clock::now() - start).count()));
    kv.write(path);
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool events = false;
};

int cmd_simulate(const SimulateArgs& a) {
  const auto start = Clock::now();
  DatasetConfig cfg = DatasetConfig::load(KeyValues::read(a.config));
  if (a.seed) cfg.trajectory.seed = *a.seed;
  if (a.events) cfg.options.with_events = true;
  generate_dataset(cfg, a.out);
  RunManifest m("simulate");
  KeyValues values;
  cfg.store(values);
  m.merge(values);
  m.set("input.config", a.config);
  m.set("output.dir", a.out);
  m.write((fs::path(a.out) / "run_manifest.txt").string(), start);
  std::printf("wrote %zu frames to %s\n", sample_trajectory(cfg.trajectory).size(), a.out.c_str());
  return 0;
}

struct EstimateArgs {
  std::string dataset;
  std::string out;
  std::string config;
  std::string filter = "classical";
  std::vector<std::string> weights;
  std::string modality = "rgb";
  std::optional<std::size_t> events;
  std::optional<int> gamma_s;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool overlays = false;
};

int cmd_estimate(const EstimateArgs& a) {
  const auto start = Clock::now();
  EstimateOptions opts;
  if (!a.config.empty()) {
    const KeyValues kv = KeyValues::read(a.config);
    kv.reject_unknown(PipelineConfig::keys());
    opts.pipeline = PipelineConfig::load(kv);
  }
  if (a.events) opts.pipeline.events_per_histogram = *a.events;
  if (a.gamma_s) opts.pipeline.gamma_s = *a.gamma_s;
  if (a.seed) opts.pipeline.ransac.rng_seed = *a.seed;
  opts.pipeline.validate();
  opts.filter = parse_filter_mode(a.filter);
  opts.modality = parse_modality(a.modality);
  opts.jobs = a.jobs;
  if (opts.filter == FilterMode::cnn && a.weights.empty())
    throw ConfigError("--filter cnn requires --weights for the ring and reflector networks");
  for (const auto& path : a.weights) {
    auto w = std::make_shared<const CnnWeights>(load_weights(path));
    (w->target == FilterTarget::ring ? opts.ring_weights : opts.reflector_weights) = w;
  }
  if (a.overlays) opts.overlay_dir = (fs::path(a.out).parent_path() / (fs::path(a.out).stem().string() + "_overlays")).string();
  opts.validate();

  const Dataset ds = Dataset::open(a.dataset);
  const EstimateRun run = estimate_dataset(ds, opts);
  write_estimates_csv(a.out, run.frames);

  std::size_t ok = 0, accepted = 0;
  for (const auto& f : run.frames) {
    ok += f.estimate.ok();
    accepted += f.estimate.ok() && f.status == TemporalStatus::accepted;
  }
  const double fps = run.seconds > 0 ? static_cast<double>(run.frames.size()) / run.seconds : 0.0;
  std::printf("%zu frames, %zu estimated, %zu accepted; %.3f s, %.1f frames/s\n", run.frames.size(), ok, accepted,
              run.seconds, fps);

  RunManifest m("estimate");
  KeyValues pipeline;
  opts.pipeline.store(pipeline);
  m.merge(pipeline);
  m.set("input.dataset", a.dataset);
  m.set("input.config", a.config);
  for (std::size_t i = 0; i < a.weights.size(); ++i) m.set("input.weights." + std::to_string(i), a.weights[i]);
  m.set("filter", a.filter);
  m.set("modality", a.modality);
  m.set("jobs", std::to_string(a.jobs));
  m.set("output.poses", a.out);
  if (!opts.overlay_dir.empty()) m.set("output.overlays", opts.overlay_dir);
  m.set("frames", std::to_string(run.frames.size()));
  m.set("frames_per_second", format_double(fps));
  m.write(a.out + ".manifest.txt", start);
  return 0;
}

struct EvalArgs {
  std::string poses;
  std::string gt;
  std::string camera;
  std::string out;
  std::string csv;
};

int cmd_eval(const EvalArgs& a) {
  const auto start = Clock::now();
  std::string camera = a.camera;
  if (camera.empty() && fs::exists(fs::path(a.gt).parent_path() / "camera.txt"))
    camera = (fs::path(a.gt).parent_path() / "camera.txt").string();
  const CameraIntrinsics k = camera.empty() ? default_intrinsics() : read_intrinsics(camera);
  const auto gt = read_poses_csv(a.gt);
  const auto rows = read_estimates_csv(a.poses);
  const MetricsReport all = aggregate(match_estimates(rows, gt, k, false));
  const MetricsReport filtered = aggregate(match_estimates(rows, gt, k, true));

  const std::string text = "Without outlier filtering\n" + format_report(all) + "\nWith outlier filtering (accepted only)\n" +
                           format_report(filtered);
  std::cout << text;
  if (!a.out.empty()) write_text(a.out, text);
  if (!a.csv.empty()) {
    std::string csv = "selection,";
    auto add = [&csv](const std::string& name, const std::string& body, bool header) {
      std::istringstream in(body);
      std::string line;
      bool first = true;
      while (std::getline(in, line)) {
        if (first) {
          first = false;
          if (header) csv += line + "\n";
          continue;
        }
        csv += name + "," + line + "\n";
      }
    };
    add("all", report_csv(all), true);
    add("accepted", report_csv(filtered), false);
    write_text(a.csv, csv);
  }

  RunManifest m("eval");
  m.set("input.poses", a.poses);
  m.set("input.gt", a.gt);
  m.set("input.camera", camera);
  m.set("output.report", a.out);
  m.set("output.csv", a.csv);
  const std::string base = !a.out.empty() ? a.out : (!a.csv.empty() ? a.csv : a.poses + ".eval");
  m.write(base + ".manifest.txt", start);
  return 0;
}

struct SensitivityArgs {
  std::string camera;
  double nu = 0.1;
  std::string distances = "0.6";
  std::string inclinations = "0,15,30,45,60";
  double noise = 1.0;
  std::string out;
};

int cmd_sensitivity(const SensitivityArgs& a) {
  const auto start = Clock::now();
  const CameraIntrinsics k = a.camera.empty() ? default_intrinsics() : read_intrinsics(a.camera);
  if (!(a.nu > 0)) throw ConfigError("--nu must be positive");
  if (!(a.noise > 0)) throw ConfigError("--noise must be positive");
  const auto ds = parse_double_list(a.distances);
  const auto incs = parse_double_list(a.inclinations);
  std::string csv = "distance_m,inclination_deg,bound_deg\n";
  std::printf("%12s %16s %12s\n", "distance_m", "inclination_deg", "bound_deg");
  for (double d : ds)
    for (double inc : incs) {
      const auto b = sensitivity_bound(k, a.nu, d, inc, a.noise);
      const std::string v = b ? format_double(*b) : "unbounded";
      std::printf("%12s %16s %12s\n", format_double(d).c_str(), format_double(inc).c_str(), v.c_str());
      csv += format_double(d) + "," + format_double(inc) + "," + v + "\n";
    }
  if (!a.out.empty()) write_text(a.out, csv);
  RunManifest m("sensitivity");
  m.set("input.camera", a.camera);
  m.set("camera.fx", format_double(k.fx));
  m.set("camera.fy", format_double(k.fy));
  m.set("camera.cx", format_double(k.cx));
  m.set("camera.cy", format_double(k.cy));
  m.set("nu", format_double(a.nu));
  m.set("distances", a.distances);
  m.set("inclinations", a.inclinations);
  m.set("pixel_noise", format_double(a.noise));
  m.set("output.csv", a.out);
  if (!a.out.empty()) m.write(a.out + ".manifest.txt", start);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Docking-port detection and pose estimation toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Render a synthetic dataset from a config or dataset manifest");
  s->add_option("--config", sim.config, "key = value config (dataset manifest keys)")->required();
  s->add_option("--out", sim.out, "output directory")->required();
  s->add_option("--seed", sim.seed, "overrides trajectory.seed");
  s->add_flag("--with-events", sim.events, "also write events.bin");

  EstimateArgs est;
  auto* e = app.add_subcommand("estimate", "Estimate per-frame poses on a dataset");
  e->add_option("--dataset", est.dataset, "dataset directory")->required();
  e->add_option("--out", est.out, "estimated poses CSV")->required();
  e->add_option("--config", est.config, "pipeline key = value config");
  e->add_option("--filter", est.filter, "classical, cnn or gt (ground-truth mask bypass)");
  e->add_option("--weights", est.weights, "PORTCNN1 weight files, one ring and one reflector");
  e->add_option("--modality", est.modality, "rgb or event");
  e->add_option("--events", est.events, "events per histogram (default 35000)");
  e->add_option("--gamma-s", est.gamma_s, "minimum skeleton pixel count");
  e->add_option("--seed", est.seed, "RANSAC seed");
  e->add_option("--jobs", est.jobs, "worker threads");
  e->add_flag("--emit-overlays", est.overlays, "write overlay images next to the CSV");

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "Compare estimated poses with ground truth");
  v->add_option("--poses", ev.poses, "estimated poses CSV")->required();
  v->add_option("--gt", ev.gt, "ground-truth poses.csv")->required();
  v->add_option("--camera", ev.camera, "intrinsics file (default: camera.txt next to --gt)");
  v->add_option("--out", ev.out, "report text file");
  v->add_option("--csv", ev.csv, "report CSV file");

  SensitivityArgs sens;
  auto* t = app.add_subcommand("sensitivity", "Tabulate the one-pixel orientation sensitivity bound");
  t->add_option("--camera", sens.camera, "intrinsics file (default: 346x260, fx = fy = 330)");
  t->add_option("--nu", sens.nu, "ring radius in metres");
  t->add_option("--distances", sens.distances, "comma-separated distances in metres");
  t->add_option("--inclinations", sens.inclinations, "comma-separated inclinations in degrees");
  t->add_option("--noise", sens.noise, "pixel displacement");
  t->add_option("--out", sens.out, "CSV output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim);
    if (e->parsed()) return cmd_estimate(est);
    if (v->parsed()) return cmd_eval(ev);
    if (t->parsed()) return cmd_sensitivity(sens);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const IoError& err) {
    std::fprintf(stderr, "I/O error: %s\n", err.what());
    return 3;
  } catch (const FormatError& err) {
    std::fprintf(stderr, "format error: %s\n", err.what());
    return 3;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "internal error: %s\n", err.what());
    return 4;
  }
  return 4;
}

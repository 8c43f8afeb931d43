#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "portdet/eval.hpp"
#include "portdet/filters.hpp"
#include "portdet/pose.hpp"
#include "portdet/synth.hpp"

namespace portdet {

// gt: the dataset's ground-truth masks stand in for both filters.
enum class FilterMode { classical, cnn, gt };
const char* to_string(FilterMode m);
FilterMode parse_filter_mode(const std::string& s);
Modality parse_modality(const std::string& s);

// A directory written by generate_dataset.
struct Dataset {
  std::string dir;
  DatasetConfig config;
  std::vector<TimedPose> gt;

  // Throws ConfigError when manifest.txt is missing or invalid.
  static Dataset open(const std::string& dir);
  std::string frame_path(int i) const;
  std::string ring_mask_path(int i) const;
  std::string reflector_mask_path(int i) const;
  std::string events_path() const;
};

struct EstimateOptions {
  PipelineConfig pipeline;
  FilterMode filter = FilterMode::classical;
  Modality modality = Modality::rgb;
  std::shared_ptr<const CnnWeights> ring_weights;
  std::shared_ptr<const CnnWeights> reflector_weights;
  int jobs = 1;
  std::string overlay_dir;  // empty: no overlays

  // Throws ConfigError on missing or mismatched weights.
  void validate() const;
};

struct EstimatedFrame {
  std::uint64_t t_us = 0;
  int frame_index = 0;
  PoseEstimate estimate;
  TemporalStatus status = TemporalStatus::pending;  // only meaningful when estimate.ok()
};

struct EstimateRun {
  std::vector<EstimatedFrame> frames;
  double seconds = 0.0;  // pipeline wall-clock, file reads included
};

// rgb: one row per frame. event: histograms of pipeline.events_per_histogram
// events, each assigned to the first GT timestamp at or after its last event;
// the latest histogram per timestamp wins and timestamps without one get no
// row. The temporal filter is applied.
EstimateRun estimate_dataset(const Dataset& ds, const EstimateOptions& opts);

// Sequential pass in frame order; aborted frames break the run.
void apply_temporal_filter(std::vector<EstimatedFrame>& frames, double threshold_deg);

struct EstimateRow {
  std::uint64_t t_us = 0;
  std::string status;  // accepted, pending, rejected or abort
  std::optional<PortPose> pose;
  double score = 0.0;
  std::string abort_reason;
};

// timestamp_us,status,tx,ty,tz,qw,qx,qy,qz,score,abort_reason
void write_estimates_csv(const std::string& path, const std::vector<EstimatedFrame>& frames);
std::vector<EstimateRow> read_estimates_csv(const std::string& path);

// One result per GT pose. A GT pose without a row is undetected (`missing`);
// with accepted_only, pending and rejected rows are undetected too. A row
// whose timestamp is not a GT timestamp throws ConfigError.
std::vector<FrameResult> match_estimates(const std::vector<EstimateRow>& rows, const std::vector<TimedPose>& gt,
                                         const CameraIntrinsics& k, bool accepted_only);

// Grey frame with the fitted ellipse in red and the estimated pose's
// reflectors in green.
RgbImage draw_overlay(const MaskImage& frame, const PoseEstimate& est, const PortModel& model,
                      const CameraIntrinsics& k);

}  // namespace portdet

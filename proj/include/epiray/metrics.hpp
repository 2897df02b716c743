#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "epiray/geometry.hpp"
#include "epiray/types.hpp"

namespace epiray::metrics {

/// Ordered camera-to-world poses of one clip.
struct Trajectory {
  std::vector<geometry::CameraPose> frames;

  int size() const { return static_cast<int>(frames.size()); }
};

/// Ground-truth and estimated trajectories, both canonicalized.
struct TrajectoryPair {
  Trajectory gt;
  Trajectory est;
};

struct MetricValues {
  double rot_err = 0.0;
  double trans_err = 0.0;
  double cam_mc = 0.0;
};

/// nullopt marks a failed trial (e.g. the mapper missed a frame).
using TrialOutcome = std::optional<MetricValues>;

struct SampleTrials {
  std::string sample_id;
  std::vector<TrialOutcome> trials;
};

struct SampleSummary {
  std::string sample_id;
  int n_trials = 0;
  int n_success = 0;
  MetricValues mean;    // over successful trials; valid when succeeded
  bool succeeded = false;
};

struct DatasetSummary {
  std::vector<SampleSummary> samples;
  MetricValues mean;  // over samples with >= 1 successful trial
  int n_samples_used = 0;
  int n_failed_samples = 0;
  double trial_failure_rate = 0.0;
};

/// Re-expresses every pose relative to the first and divides translations
/// by the distance to the furthest camera (left unscaled when the whole
/// trajectory is within 1e-9 of static).
Trajectory canonicalize(const Trajectory& t);

/// Nearest-rotation projection of every frame, for estimates parsed from
/// limited-precision text output.
Trajectory orthonormalized(const Trajectory& t);

TrajectoryPair make_canonical_pair(const Trajectory& gt,
                                   const Trajectory& est);

/// Sum over frames of arccos((tr(R_est R_gt^T) - 1) / 2), radians. The
/// arccos argument is clamped to [-1, 1].
double rot_err(const TrajectoryPair& pair);

/// Sum over frames of |T_est - T_gt|_2.
double trans_err(const TrajectoryPair& pair);

/// Sum over frames of the Frobenius norm of the 3x4 [R|T] difference.
double cam_mc(const TrajectoryPair& pair);

MetricValues evaluate(const TrajectoryPair& pair);

/// Per-sample mean over successful trials, dataset mean over samples with
/// at least one success. Throws on empty input.
DatasetSummary aggregate(const std::vector<SampleTrials>& samples);

/// CSV rows sample_id,trial,rot_err,trans_err,cam_mc,status.
void write_report_csv(const std::vector<SampleTrials>& samples,
                      const std::filesystem::path& path);

/// JSON with dataset means, sample counts and the trial failure rate.
void write_summary_json(const DatasetSummary& summary,
                        const std::filesystem::path& path);

}  // namespace epiray::metrics

#include "epiray/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace epiray::metrics {

Trajectory canonicalize(const Trajectory& t) {
  if (t.size() < 2) {
    throw std::invalid_argument("canonicalize: need at least 2 poses");
  }
  const Mat3 r0_t = t.frames.front().rotation.transpose();
  const Vec3 t0 = t.frames.front().translation;

  Trajectory out;
  out.frames.reserve(t.frames.size());
  double max_norm = 0.0;
  for (const geometry::CameraPose& c : t.frames) {
    geometry::CameraPose rel;
    rel.rotation = r0_t * c.rotation;
    rel.translation = r0_t * (c.translation - t0);
    max_norm = std::max(max_norm, rel.translation.norm());
    out.frames.push_back(rel);
  }
  if (max_norm >= 1e-9) {
    for (geometry::CameraPose& c : out.frames) {
      c.translation /= max_norm;
    }
  }
  return out;
}

Trajectory orthonormalized(const Trajectory& t) {
  Trajectory out = t;
  for (geometry::CameraPose& pose : out.frames) {
    Eigen::JacobiSVD<Mat3> svd(pose.rotation,
                               Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
      Mat3 flip = Mat3::Identity();
      flip(2, 2) = -1.0;
      r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    pose.rotation = r;
  }
  return out;
}

TrajectoryPair make_canonical_pair(const Trajectory& gt,
                                   const Trajectory& est) {
  if (gt.size() != est.size()) {
    throw std::invalid_argument("make_canonical_pair: length mismatch");
  }
  return TrajectoryPair{canonicalize(gt), canonicalize(est)};
}

double rot_err(const TrajectoryPair& pair) {
  double sum = 0.0;
  for (int i = 0; i < pair.gt.size(); ++i) {
    const double tr =
        (pair.est.frames[i].rotation * pair.gt.frames[i].rotation.transpose())
            .trace();
    sum += std::acos(std::clamp((tr - 1.0) / 2.0, -1.0, 1.0));
  }
  return sum;
}

double trans_err(const TrajectoryPair& pair) {
  double sum = 0.0;
  for (int i = 0; i < pair.gt.size(); ++i) {
    sum += (pair.est.frames[i].translation - pair.gt.frames[i].translation)
               .norm();
  }
  return sum;
}

double cam_mc(const TrajectoryPair& pair) {
  double sum = 0.0;
  for (int i = 0; i < pair.gt.size(); ++i) {
    sum += (pair.est.frames[i].as_matrix() - pair.gt.frames[i].as_matrix())
               .norm();
  }
  return sum;
}

MetricValues evaluate(const TrajectoryPair& pair) {
  return MetricValues{rot_err(pair), trans_err(pair), cam_mc(pair)};
}

DatasetSummary aggregate(const std::vector<SampleTrials>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("aggregate: no samples");
  }
  DatasetSummary summary;
  int total_trials = 0;
  int failed_trials = 0;
  MetricValues dataset_sum;
  for (const SampleTrials& sample : samples) {
    SampleSummary s;
    s.sample_id = sample.sample_id;
    s.n_trials = static_cast<int>(sample.trials.size());
    MetricValues sum;
    for (const TrialOutcome& trial : sample.trials) {
      ++total_trials;
      if (!trial.has_value()) {
        ++failed_trials;
        continue;
      }
      ++s.n_success;
      sum.rot_err += trial->rot_err;
      sum.trans_err += trial->trans_err;
      sum.cam_mc += trial->cam_mc;
    }
    if (s.n_success > 0) {
      s.succeeded = true;
      s.mean = MetricValues{sum.rot_err / s.n_success,
                            sum.trans_err / s.n_success,
                            sum.cam_mc / s.n_success};
      dataset_sum.rot_err += s.mean.rot_err;
      dataset_sum.trans_err += s.mean.trans_err;
      dataset_sum.cam_mc += s.mean.cam_mc;
      ++summary.n_samples_used;
    } else {
      ++summary.n_failed_samples;
    }
    summary.samples.push_back(std::move(s));
  }
  if (summary.n_samples_used > 0) {
    summary.mean = MetricValues{dataset_sum.rot_err / summary.n_samples_used,
                                dataset_sum.trans_err / summary.n_samples_used,
                                dataset_sum.cam_mc / summary.n_samples_used};
  }
  summary.trial_failure_rate =
      total_trials > 0 ? static_cast<double>(failed_trials) / total_trials
                       : 0.0;
  return summary;
}

void write_report_csv(const std::vector<SampleTrials>& samples,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_report_csv: cannot open " + path.string());
  }
  out << "sample_id,trial,rot_err,trans_err,cam_mc,status\n";
  out.precision(17);
  for (const SampleTrials& sample : samples) {
    for (std::size_t t = 0; t < sample.trials.size(); ++t) {
      out << sample.sample_id << "," << t << ",";
      if (sample.trials[t].has_value()) {
        const MetricValues& v = *sample.trials[t];
        out << v.rot_err << "," << v.trans_err << "," << v.cam_mc << ",ok\n";
      } else {
        out << ",,,failed\n";
      }
    }
  }
}

void write_summary_json(const DatasetSummary& summary,
                        const std::filesystem::path& path) {
  nlohmann::json j;
  j["rot_err"] = summary.mean.rot_err;
  j["trans_err"] = summary.mean.trans_err;
  j["cam_mc"] = summary.mean.cam_mc;
  j["n_samples"] = summary.samples.size();
  j["n_samples_used"] = summary.n_samples_used;
  j["n_failed_samples"] = summary.n_failed_samples;
  j["trial_failure_rate"] = summary.trial_failure_rate;
  nlohmann::json per_sample = nlohmann::json::array();
  for (const SampleSummary& s : summary.samples) {
    nlohmann::json js;
    js["sample_id"] = s.sample_id;
    js["n_trials"] = s.n_trials;
    js["n_success"] = s.n_success;
    js["status"] = s.succeeded ? "ok" : "failed";
    if (s.succeeded) {
      js["rot_err"] = s.mean.rot_err;
      js["trans_err"] = s.mean.trans_err;
      js["cam_mc"] = s.mean.cam_mc;
    }
    per_sample.push_back(std::move(js));
  }
  j["samples"] = std::move(per_sample);

  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_summary_json: cannot open " +
                             path.string());
  }
  out << j.dump(2) << "\n";
}

}  // namespace epiray::metrics

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epiray/geometry.hpp"
#include "epiray/metrics.hpp"
#include "epiray/types.hpp"

namespace epiray::io {

/// One line of a RealEstate10K-style camera file: timestamp, normalized
/// intrinsics, two reserved zeros, then a row-major 3x4 world-to-camera.
struct PoseFileRecord {
  std::int64_t timestamp = 0;
  double fx = 0.0;  // fraction of width
  double fy = 0.0;  // fraction of height
  double cx = 0.0;
  double cy = 0.0;
  double reserved0 = 0.0;
  double reserved1 = 0.0;
  Mat34 pose = Mat34::Zero();
};

struct PoseFile {
  std::string url;  // optional header line
  std::vector<PoseFileRecord> records;
  std::vector<std::string> warnings;  // e.g. near-orthonormality notes
};

PoseFile parse_pose_file(const std::string& text);
PoseFile load_pose_file(const std::filesystem::path& path);

/// Inverse of parse up to 17-significant-digit float formatting.
std::string serialize_pose_file(const PoseFile& file);

geometry::CameraIntrinsics denormalize_intrinsics(const PoseFileRecord& rec,
                                                  int width, int height);

/// Principal point shifted by the centered crop offset.
geometry::CameraIntrinsics center_crop(const geometry::CameraIntrinsics& k,
                                       int crop_w, int crop_h);

geometry::CameraFrame to_camera_frame(const PoseFileRecord& rec, int width,
                                      int height);

struct SfmCamera {
  int camera_id = 0;
  std::string model;  // SIMPLE_PINHOLE or PINHOLE
  geometry::CameraIntrinsics intrinsics;
};

/// World-to-camera pose as a unit quaternion (qw,qx,qy,qz) + translation.
struct SfmImage {
  int image_id = 0;
  Vec4 quat = Vec4(1, 0, 0, 0);
  Vec3 translation = Vec3::Zero();
  int camera_id = 0;
  std::string name;
};

struct SfmModel {
  std::map<int, SfmCamera> cameras;
  std::vector<SfmImage> images;

  const SfmImage* find_image(const std::string& name) const;
};

Mat3 quaternion_to_rotation(const Vec4& q_wxyz);
Vec4 rotation_to_quaternion(const Mat3& r);

/// COLMAP text model layout; image entries alternate with 2D-point lines,
/// which are skipped. Only SIMPLE_PINHOLE and PINHOLE camera models are
/// accepted.
SfmModel parse_sfm_model(const std::string& cameras_text,
                         const std::string& images_text);
SfmModel load_sfm_model(const std::filesystem::path& dir);

/// Writes cameras.txt / images.txt for the given world-to-camera frames.
/// `digits` bounds the printed precision, emulating mapper text output.
void write_sfm_model(const std::filesystem::path& dir,
                     const std::vector<geometry::CameraFrame>& frames,
                     const std::vector<std::string>& names, int digits = 12);

struct TrajectoryResult {
  std::optional<metrics::Trajectory> trajectory;
  std::string error;

  bool ok() const { return trajectory.has_value(); }
};

/// Camera-to-world trajectory ordered by expected_names; fails (without a
/// partial result) when a name is missing or a pose is not finite.
TrajectoryResult to_trajectory(const SfmModel& model,
                               const std::vector<std::string>& expected_names);

/// [start, start+stride, ...], length n. Throws std::out_of_range when the
/// last index would not fit in `total` frames.
std::vector<int> sample_strided(int total, int stride, int n = 16,
                                int start = 0);

enum class TrajectoryKind { orbit, dolly, pan, random_smooth };

struct SynthParams {
  double translation_step = 0.1;    // dolly step per frame
  double pan_deg_per_frame = 2.0;   // pan angular step
  double orbit_radius = 2.0;
  double orbit_deg_per_frame = 4.0;
  double smooth_noise = 0.2;        // random_smooth jitter fraction
};

/// Deterministic camera-to-world trajectory with an identity first pose.
metrics::Trajectory synth_trajectory(TrajectoryKind kind, int n,
                                     std::uint64_t seed,
                                     const SynthParams& params = {});

TrajectoryKind trajectory_kind_from_string(const std::string& name);
std::string to_string(TrajectoryKind kind);

/// {"frames":[{"R":[9 row-major],"T":[3]}]}, camera-to-world.
void write_trajectory_json(const metrics::Trajectory& t,
                           const std::filesystem::path& path);
metrics::Trajectory read_trajectory_json(const std::filesystem::path& path);

/// Feature-extraction / matching / mapping commands with the settings the
/// evaluation pipeline assumes (fixed shared intrinsics, exhaustive guided
/// matching, relaxed relative-pose error). See docs/sfm_runbook.md.
std::vector<std::string> glomap_invocation(
    const geometry::CameraIntrinsics& k, const std::string& image_dir,
    const std::string& workspace_dir);

}  // namespace epiray::io

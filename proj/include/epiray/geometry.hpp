#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "epiray/types.hpp"

namespace epiray::geometry {

/// Pinhole intrinsics in pixels at a stated reference resolution.
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Mat3 as_matrix() const;
  bool is_valid() const;
};

/// World-to-camera extrinsics [R|T]. Camera-to-world values use the same
/// struct and are labeled at the call site; the library-wide convention is
/// world-to-camera.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Mat34 as_matrix() const;
  bool is_valid(double tol = 1e-6) const;
};

struct CameraFrame {
  CameraIntrinsics intrinsics;
  CameraPose pose;  // world-to-camera
  std::optional<std::int64_t> timestamp;
};

/// A 3D line as (moment, direction) with unit direction and moment = p x d
/// for any point p on the line. |moment| is the line-to-origin distance.
struct PluckerRay {
  Vec3 moment = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
};

/// Per-pixel ray bundle of one frame, rows(h*w) x 6 with channels
/// (mx,my,mz,dx,dy,dz), pixel order row-major.
struct PluckerGrid {
  Eigen::Matrix<double, Eigen::Dynamic, 6> rays;
  int h = 0;
  int w = 0;
  int frame_index = 0;

  PluckerRay at(int row, int col) const;
};

Mat3 skew(const Vec3& v);

/// SE(3) inverse: (R, T) -> (R^T, -R^T T). Involution.
CameraPose camera_to_world(const CameraPose& pose);

Vec3 camera_center(const CameraPose& world_to_camera);

/// Pose of frame j relative to frame i: R_j R_i^T, T_j - R_j R_i^T T_i.
CameraPose relative_pose(const CameraPose& from, const CameraPose& to);
CameraPose relative_pose(const CameraFrame& from, const CameraFrame& to);

/// Projects a world point to pixel coordinates. Returns nullopt when the
/// point is not in front of the camera.
std::optional<Vec2> project_point(const CameraFrame& frame, const Vec3& x);

PluckerRay unproject_ray(const CameraFrame& frame, double u, double v);

/// Rays at pixel centers (c+0.5, r+0.5) of a w x h raster; intrinsics are
/// rescaled from their reference resolution to (w, h) first.
PluckerGrid plucker_grid(const CameraFrame& frame, int h, int w,
                         int frame_index = 0);

CameraIntrinsics scale_intrinsics(const CameraIntrinsics& k, int new_w,
                                  int new_h);

/// Camera center shared by two non-parallel rays of one bundle, from the
/// normal equations of |(I - d d^T)(C - p)| over both rays.
Vec3 recover_center(const PluckerRay& a, const PluckerRay& b);

}  // namespace epiray::geometry

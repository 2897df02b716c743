#include "epiray/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace epiray::geometry {

Mat3 CameraIntrinsics::as_matrix() const {
  Mat3 k = Mat3::Identity();
  k(0, 0) = fx;
  k(1, 1) = fy;
  k(0, 2) = cx;
  k(1, 2) = cy;
  return k;
}

bool CameraIntrinsics::is_valid() const {
  return fx > 0.0 && fy > 0.0 && width > 0 && height > 0 &&
         std::isfinite(cx) && std::isfinite(cy);
}

Mat34 CameraPose::as_matrix() const {
  Mat34 m;
  m.leftCols<3>() = rotation;
  m.col(3) = translation;
  return m;
}

bool CameraPose::is_valid(double tol) const {
  const Mat3 gram = rotation.transpose() * rotation;
  return (gram - Mat3::Identity()).norm() < tol &&
         rotation.determinant() > 0.0 && translation.allFinite();
}

PluckerRay PluckerGrid::at(int row, int col) const {
  const auto r6 = rays.row(static_cast<Eigen::Index>(row) * w + col);
  return PluckerRay{r6.head<3>().transpose(), r6.tail<3>().transpose()};
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

CameraPose camera_to_world(const CameraPose& pose) {
  return CameraPose{pose.rotation.transpose(),
                    -(pose.rotation.transpose() * pose.translation)};
}

Vec3 camera_center(const CameraPose& world_to_camera) {
  return -(world_to_camera.rotation.transpose() * world_to_camera.translation);
}

CameraPose relative_pose(const CameraPose& from, const CameraPose& to) {
  const Mat3 r = to.rotation * from.rotation.transpose();
  return CameraPose{r, to.translation - r * from.translation};
}

CameraPose relative_pose(const CameraFrame& from, const CameraFrame& to) {
  return relative_pose(from.pose, to.pose);
}

std::optional<Vec2> project_point(const CameraFrame& frame, const Vec3& x) {
  const Vec3 cam = frame.pose.rotation * x + frame.pose.translation;
  if (cam.z() <= 0.0) {
    return std::nullopt;
  }
  const Vec3 px = frame.intrinsics.as_matrix() * cam;
  return Vec2(px.x() / px.z(), px.y() / px.z());
}

PluckerRay unproject_ray(const CameraFrame& frame, double u, double v) {
  const Mat3 k_inv = frame.intrinsics.as_matrix().inverse();
  const Mat3 r_inv = frame.pose.rotation.transpose();
  Vec3 d = r_inv * (k_inv * Vec3(u, v, 1.0));
  d.normalize();
  // Moment from the normalized direction so |m| is the ray-origin distance.
  const Vec3 center = camera_center(frame.pose);
  return PluckerRay{center.cross(d), d};
}

PluckerGrid plucker_grid(const CameraFrame& frame, int h, int w,
                         int frame_index) {
  if (h < 1 || w < 1) {
    throw std::invalid_argument("plucker_grid: grid size must be >= 1");
  }
  CameraFrame scaled = frame;
  scaled.intrinsics = scale_intrinsics(frame.intrinsics, w, h);

  PluckerGrid grid;
  grid.h = h;
  grid.w = w;
  grid.frame_index = frame_index;
  grid.rays.resize(static_cast<Eigen::Index>(h) * w, 6);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const PluckerRay ray = unproject_ray(scaled, c + 0.5, r + 0.5);
      grid.rays.row(static_cast<Eigen::Index>(r) * w + c)
          << ray.moment.transpose(),
          ray.direction.transpose();
    }
  }
  return grid;
}

CameraIntrinsics scale_intrinsics(const CameraIntrinsics& k, int new_w,
                                  int new_h) {
  if (new_w < 1 || new_h < 1) {
    throw std::invalid_argument("scale_intrinsics: target size must be >= 1");
  }
  const double sx = static_cast<double>(new_w) / k.width;
  const double sy = static_cast<double>(new_h) / k.height;
  return CameraIntrinsics{k.fx * sx, k.fy * sy, k.cx * sx,
                          k.cy * sy, new_w,     new_h};
}

Vec3 recover_center(const PluckerRay& a, const PluckerRay& b) {
  Mat3 lhs = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  for (const PluckerRay* ray : {&a, &b}) {
    const Mat3 proj =
        Mat3::Identity() - ray->direction * ray->direction.transpose();
    lhs += proj;
    rhs += proj * ray->direction.cross(ray->moment);
  }
  return lhs.ldlt().solve(rhs);
}

}  // namespace epiray::geometry

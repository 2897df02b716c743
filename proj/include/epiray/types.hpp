#pragma once

#include <Eigen/Dense>

namespace epiray {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;
using MatX = Eigen::MatrixXd;
using RowVecX = Eigen::RowVectorXd;
using MaskBits = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

}  // namespace epiray

#pragma once

#include <stdexcept>

#include "epiray/types.hpp"

namespace epiray::guidance {

/// Three noise predictions sharing one shape: camera kept with image/text
/// dropped, everything kept, camera dropped with image/text kept.
struct GuidancePrediction {
  Eigen::ArrayXXd eps_cam_only;
  Eigen::ArrayXXd eps_full;
  Eigen::ArrayXXd eps_no_cam;
};

struct GuidanceScales {
  double s_img_txt = 1.0;
  double s_camera = 1.0;
};

/// eps_cam_only + s_img_txt * (eps_full - eps_cam_only)
///              + s_camera  * (eps_full - eps_no_cam)
inline Eigen::ArrayXXd combine(const GuidancePrediction& pred,
                               const GuidanceScales& scales) {
  const auto rows = pred.eps_full.rows();
  const auto cols = pred.eps_full.cols();
  if (pred.eps_cam_only.rows() != rows || pred.eps_cam_only.cols() != cols ||
      pred.eps_no_cam.rows() != rows || pred.eps_no_cam.cols() != cols) {
    throw std::invalid_argument("combine: prediction shapes differ");
  }
  return pred.eps_cam_only +
         scales.s_img_txt * (pred.eps_full - pred.eps_cam_only) +
         scales.s_camera * (pred.eps_full - pred.eps_no_cam);
}

}  // namespace epiray::guidance

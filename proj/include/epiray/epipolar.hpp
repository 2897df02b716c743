#pragma once

#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "epiray/geometry.hpp"
#include "epiray/types.hpp"

namespace epiray::epipolar {

struct FundamentalMatrix {
  Mat3 f = Mat3::Zero();
  int from_frame = 0;
  int to_frame = 0;
};

/// Line a*x + b*y + c = 0 with a^2 + b^2 = 1 when valid.
struct EpipolarLine {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  bool valid = false;
};

/// Attention mask for one query frame: rows are query pixels of frame
/// `query_frame` (row-major), columns are frame 0..N-1 target pixels
/// (each row-major) followed by `n_registers` always-true register columns.
struct EpipolarMask {
  MaskBits bits;
  int h = 0;
  int w = 0;
  int n_frames = 0;
  int n_registers = 0;
  int query_frame = 0;

  Eigen::Index query_count() const { return bits.rows(); }
  Eigen::Index key_count() const { return bits.cols(); }
};

struct MaskLevel {
  int h = 0;
  int w = 0;
  double delta = 0.0;
  std::vector<EpipolarMask> masks;  // one per query frame
};

struct EpipolarMaskSet {
  std::vector<MaskLevel> levels;
  int n_frames = 0;
  int n_registers = 0;
};

/// Threshold in feature pixels as a function of the level size (h, w).
using DeltaRule = std::function<double(int h, int w)>;

/// Half the diagonal of one grid cell, sqrt(2)/2. Default threshold.
DeltaRule half_cell_diagonal();
DeltaRule constant_delta(double delta);

/// E = [T]x R for a relative pose i->j.
Mat3 essential_matrix(const geometry::CameraPose& rel);

/// F = K_j^-T E K_i^-1; intrinsics must already be at feature resolution.
FundamentalMatrix fundamental_matrix(const geometry::CameraIntrinsics& k_i,
                                     const geometry::CameraIntrinsics& k_j,
                                     const geometry::CameraPose& rel,
                                     int from_frame = 0, int to_frame = 0);

/// F * (u,v,1)^T normalized by sqrt(A^2+B^2); invalid when that norm
/// is below 1e-12.
EpipolarLine epipolar_line(const FundamentalMatrix& f, double u, double v);

/// Signed distance A*u' + B*v' + C in feature pixels. Requires line.valid.
double point_line_distance(const EpipolarLine& line, double u, double v);

/// Epipolar attention mask for one query frame over all frames at feature
/// size h x w. Self block and degenerate pairs (|T| < 1e-6, invalid lines)
/// are all-true; register columns are always true.
EpipolarMask build_mask(const std::vector<geometry::CameraFrame>& frames,
                        int query, int h, int w, double delta,
                        int n_registers);

EpipolarMaskSet build_mask_set(
    const std::vector<geometry::CameraFrame>& frames,
    const std::vector<std::pair<int, int>>& resolutions,
    const DeltaRule& delta_rule, int n_registers);

/// Variant with epipolar bits only for frame 0 (plus the all-true self
/// block); every other frame block is all-false.
EpipolarMask reference_frame_mask(
    const std::vector<geometry::CameraFrame>& frames, int query, int h, int w,
    double delta, int n_registers);

double mask_density(const EpipolarMask& mask);

/// Binary export, little-endian:
///   "EPIM", u32 version, u32 h0, u32 w0, u32 N, u32 R, u32 n_levels,
///   then per level: u32 h, u32 w, f64 delta, N masks packed row-major
///   (bit index r*cols+c, LSB-first within each byte).
void write_mask_set(const EpipolarMaskSet& set,
                    const std::filesystem::path& path);
EpipolarMaskSet read_mask_set(const std::filesystem::path& path);

/// One mask row rendered as N frame tiles side by side (registers omitted),
/// binary PGM, 255 = attendable.
void write_mask_row_pgm(const EpipolarMask& mask, int query_pixel,
                        const std::filesystem::path& path);

}  // namespace epiray::epipolar

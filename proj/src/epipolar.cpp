#include "epiray/epipolar.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace epiray::epipolar {

namespace {

constexpr double kDegenerateBaseline = 1e-6;

void fill_block(MaskBits& bits, Eigen::Index row, int block, Eigen::Index hw,
                bool value) {
  bits.row(row).segment(static_cast<Eigen::Index>(block) * hw, hw) = value;
}

}  // namespace

DeltaRule half_cell_diagonal() {
  return [](int, int) { return std::sqrt(2.0) / 2.0; };
}

DeltaRule constant_delta(double delta) {
  return [delta](int, int) { return delta; };
}

Mat3 essential_matrix(const geometry::CameraPose& rel) {
  return geometry::skew(rel.translation) * rel.rotation;
}

FundamentalMatrix fundamental_matrix(const geometry::CameraIntrinsics& k_i,
                                     const geometry::CameraIntrinsics& k_j,
                                     const geometry::CameraPose& rel,
                                     int from_frame, int to_frame) {
  const Mat3 e = essential_matrix(rel);
  const Mat3 f = k_j.as_matrix().inverse().transpose() * e *
                 k_i.as_matrix().inverse();
  return FundamentalMatrix{f, from_frame, to_frame};
}

EpipolarLine epipolar_line(const FundamentalMatrix& f, double u, double v) {
  const Vec3 l = f.f * Vec3(u, v, 1.0);
  const double norm = std::sqrt(l.x() * l.x() + l.y() * l.y());
  if (norm < 1e-12) {
    return EpipolarLine{};
  }
  return EpipolarLine{l.x() / norm, l.y() / norm, l.z() / norm, true};
}

double point_line_distance(const EpipolarLine& line, double u, double v) {
  if (!line.valid) {
    throw std::invalid_argument("point_line_distance: invalid epipolar line");
  }
  return line.a * u + line.b * v + line.c;
}

EpipolarMask build_mask(const std::vector<geometry::CameraFrame>& frames,
                        int query, int h, int w, double delta,
                        int n_registers) {
  const int n = static_cast<int>(frames.size());
  if (query < 0 || query >= n) {
    throw std::invalid_argument("build_mask: query frame out of range");
  }
  if (h < 1 || w < 1 || delta <= 0.0 || n_registers < 0) {
    throw std::invalid_argument("build_mask: bad mask parameters");
  }
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;

  EpipolarMask mask;
  mask.h = h;
  mask.w = w;
  mask.n_frames = n;
  mask.n_registers = n_registers;
  mask.query_frame = query;
  mask.bits = MaskBits::Constant(hw, n * hw + n_registers, false);
  mask.bits.rightCols(n_registers) = true;

  const geometry::CameraIntrinsics k_i =
      geometry::scale_intrinsics(frames[query].intrinsics, w, h);
  for (int j = 0; j < n; ++j) {
    if (j == query) {
      for (Eigen::Index p = 0; p < hw; ++p) {
        fill_block(mask.bits, p, j, hw, true);
      }
      continue;
    }
    const geometry::CameraPose rel =
        geometry::relative_pose(frames[query], frames[j]);
    if (rel.translation.norm() < kDegenerateBaseline) {
      // Zero baseline: the epipolar map degenerates, keep full visibility.
      for (Eigen::Index p = 0; p < hw; ++p) {
        fill_block(mask.bits, p, j, hw, true);
      }
      continue;
    }
    const geometry::CameraIntrinsics k_j =
        geometry::scale_intrinsics(frames[j].intrinsics, w, h);
    const FundamentalMatrix f = fundamental_matrix(k_i, k_j, rel, query, j);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const Eigen::Index p = static_cast<Eigen::Index>(r) * w + c;
        const EpipolarLine line = epipolar_line(f, c + 0.5, r + 0.5);
        if (!line.valid) {
          fill_block(mask.bits, p, j, hw, true);
          continue;
        }
        for (int rr = 0; rr < h; ++rr) {
          for (int cc = 0; cc < w; ++cc) {
            const double d = point_line_distance(line, cc + 0.5, rr + 0.5);
            if (std::abs(d) < delta) {
              mask.bits(p, static_cast<Eigen::Index>(j) * hw +
                               static_cast<Eigen::Index>(rr) * w + cc) = true;
            }
          }
        }
      }
    }
  }
  return mask;
}

EpipolarMaskSet build_mask_set(
    const std::vector<geometry::CameraFrame>& frames,
    const std::vector<std::pair<int, int>>& resolutions,
    const DeltaRule& delta_rule, int n_registers) {
  if (resolutions.empty()) {
    throw std::invalid_argument("build_mask_set: no resolutions");
  }
  EpipolarMaskSet set;
  set.n_frames = static_cast<int>(frames.size());
  set.n_registers = n_registers;
  for (const auto& [h, w] : resolutions) {
    MaskLevel level;
    level.h = h;
    level.w = w;
    level.delta = delta_rule(h, w);
    level.masks.reserve(frames.size());
    for (int i = 0; i < set.n_frames; ++i) {
      level.masks.push_back(
          build_mask(frames, i, h, w, level.delta, n_registers));
    }
    set.levels.push_back(std::move(level));
  }
  return set;
}

EpipolarMask reference_frame_mask(
    const std::vector<geometry::CameraFrame>& frames, int query, int h, int w,
    double delta, int n_registers) {
  EpipolarMask mask = build_mask(frames, query, h, w, delta, n_registers);
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  for (int j = 0; j < mask.n_frames; ++j) {
    if (j == 0 || j == query) {
      continue;
    }
    for (Eigen::Index p = 0; p < hw; ++p) {
      fill_block(mask.bits, p, j, hw, false);
    }
  }
  return mask;
}

double mask_density(const EpipolarMask& mask) {
  return static_cast<double>(mask.bits.count()) /
         static_cast<double>(mask.bits.size());
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& out, double v) {
  std::uint64_t u;
  static_assert(sizeof(u) == sizeof(v));
  std::memcpy(&u, &v, sizeof(u));
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) {
    u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  }
  double v;
  std::memcpy(&v, &u, sizeof(v));
  return v;
}

void write_mask_bits(std::ostream& out, const MaskBits& bits) {
  const Eigen::Index total = bits.size();
  const Eigen::Index cols = bits.cols();
  std::vector<unsigned char> packed((total + 7) / 8, 0);
  for (Eigen::Index r = 0; r < bits.rows(); ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (bits(r, c)) {
        const Eigen::Index idx = r * cols + c;
        packed[idx / 8] |= static_cast<unsigned char>(1u << (idx % 8));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(packed.data()),
            static_cast<std::streamsize>(packed.size()));
}

MaskBits read_mask_bits(std::istream& in, Eigen::Index rows,
                        Eigen::Index cols) {
  std::vector<unsigned char> packed((rows * cols + 7) / 8);
  in.read(reinterpret_cast<char*>(packed.data()),
          static_cast<std::streamsize>(packed.size()));
  MaskBits bits(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Eigen::Index idx = r * cols + c;
      bits(r, c) = (packed[idx / 8] >> (idx % 8)) & 1u;
    }
  }
  return bits;
}

}  // namespace

void write_mask_set(const EpipolarMaskSet& set,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("write_mask_set: cannot open " + path.string());
  }
  out.write("EPIM", 4);
  write_u32(out, 1);
  write_u32(out, set.levels.empty() ? 0 : set.levels.front().h);
  write_u32(out, set.levels.empty() ? 0 : set.levels.front().w);
  write_u32(out, set.n_frames);
  write_u32(out, set.n_registers);
  write_u32(out, static_cast<std::uint32_t>(set.levels.size()));
  for (const MaskLevel& level : set.levels) {
    write_u32(out, level.h);
    write_u32(out, level.w);
    write_f64(out, level.delta);
    for (const EpipolarMask& mask : level.masks) {
      write_mask_bits(out, mask.bits);
    }
  }
  if (!out) {
    throw std::runtime_error("write_mask_set: write failed for " +
                             path.string());
  }
}

EpipolarMaskSet read_mask_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("read_mask_set: cannot open " + path.string());
  }
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "EPIM") {
    throw std::runtime_error("read_mask_set: bad magic in " + path.string());
  }
  const std::uint32_t version = read_u32(in);
  if (version != 1) {
    throw std::runtime_error("read_mask_set: unsupported version " +
                             std::to_string(version));
  }
  read_u32(in);  // h of level 0, repeated per level below
  read_u32(in);  // w of level 0
  EpipolarMaskSet set;
  set.n_frames = static_cast<int>(read_u32(in));
  set.n_registers = static_cast<int>(read_u32(in));
  const std::uint32_t n_levels = read_u32(in);
  for (std::uint32_t li = 0; li < n_levels; ++li) {
    MaskLevel level;
    level.h = static_cast<int>(read_u32(in));
    level.w = static_cast<int>(read_u32(in));
    level.delta = read_f64(in);
    const Eigen::Index hw = static_cast<Eigen::Index>(level.h) * level.w;
    for (int i = 0; i < set.n_frames; ++i) {
      EpipolarMask mask;
      mask.h = level.h;
      mask.w = level.w;
      mask.n_frames = set.n_frames;
      mask.n_registers = set.n_registers;
      mask.query_frame = i;
      mask.bits = read_mask_bits(in, hw, set.n_frames * hw + set.n_registers);
      level.masks.push_back(std::move(mask));
    }
    set.levels.push_back(std::move(level));
  }
  if (!in) {
    throw std::runtime_error("read_mask_set: truncated file " + path.string());
  }
  return set;
}

void write_mask_row_pgm(const EpipolarMask& mask, int query_pixel,
                        const std::filesystem::path& path) {
  const Eigen::Index hw = static_cast<Eigen::Index>(mask.h) * mask.w;
  if (query_pixel < 0 || query_pixel >= hw) {
    throw std::invalid_argument("write_mask_row_pgm: query pixel out of range");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("write_mask_row_pgm: cannot open " +
                             path.string());
  }
  const int img_w = mask.w * mask.n_frames;
  out << "P5\n" << img_w << " " << mask.h << "\n255\n";
  std::vector<unsigned char> row(img_w);
  for (int r = 0; r < mask.h; ++r) {
    for (int j = 0; j < mask.n_frames; ++j) {
      for (int c = 0; c < mask.w; ++c) {
        const Eigen::Index col = static_cast<Eigen::Index>(j) * hw +
                                 static_cast<Eigen::Index>(r) * mask.w + c;
        row[static_cast<std::size_t>(j) * mask.w + c] =
            mask.bits(query_pixel, col) ? 255 : 0;
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), img_w);
  }
}

}  // namespace epiray::epipolar

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "epiray/types.hpp"

namespace epiray {

/// Deterministic generator: draws are produced by explicit arithmetic on
/// mt19937_64 output, so sequences are identical across standard libraries.
class RandomGen {
 public:
  explicit RandomGen(std::uint64_t seed) : eng_(seed) {}

  /// Uniform on (0, 1].
  double uniform() {
    return (static_cast<double>(eng_()) + 1.0) * 0x1.0p-64;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  MatX normal_matrix(Eigen::Index rows, Eigen::Index cols,
                     double scale = 1.0) {
    MatX m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        m(r, c) = scale * normal();
      }
    }
    return m;
  }

  Vec3 normal_vec3(double scale = 1.0) {
    return Vec3(scale * normal(), scale * normal(), scale * normal());
  }

  std::uint64_t next_u64() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace epiray

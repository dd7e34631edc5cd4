#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "koopdecomp/errors.hpp"

namespace koopdecomp {

inline constexpr int kMaxDim = 8;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Dynamic size with a fixed upper bound keeps states on the stack.
using State = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;
using cplx = std::complex<double>;

// Representative of an angle in [0, 2pi).
inline double wrap_angle(double a) {
  double r = std::fmod(a, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r -= kTwoPi;
  return r;
}

// Signed angular difference in (-pi, pi].
inline double angle_difference(double a, double b) {
  double r = std::remainder(a - b, kTwoPi);
  if (r <= -std::numbers::pi) r += kTwoPi;
  return r;
}

// Fraction in [0, 1).
inline double wrap_unit(double a) {
  double r = a - std::floor(a);
  return r >= 1.0 ? 0.0 : r;
}

// Chart T^a x R^b, coordinates in any order; angle_mask marks the circle factors.
class Chart {
 public:
  Chart() = default;
  explicit Chart(std::vector<bool> angle_mask) : mask_(std::move(angle_mask)) {
    if (mask_.empty() || mask_.size() > static_cast<std::size_t>(kMaxDim))
      throw InvalidArgument("chart dimension must be in [1, " + std::to_string(kMaxDim) + "]");
  }

  int dim() const noexcept { return static_cast<int>(mask_.size()); }
  bool is_angle(int i) const { return mask_[static_cast<std::size_t>(i)]; }
  const std::vector<bool>& angle_mask() const noexcept { return mask_; }

  void wrap(State& x) const {
    for (int i = 0; i < dim(); ++i)
      if (is_angle(i)) x[i] = wrap_angle(x[i]);
  }
  State wrapped(State x) const {
    wrap(x);
    return x;
  }

  // a - b with angle components taken on the circle.
  State difference(const State& a, const State& b) const {
    State d = a - b;
    for (int i = 0; i < dim(); ++i)
      if (is_angle(i)) d[i] = angle_difference(a[i], b[i]);
    return d;
  }
  double distance(const State& a, const State& b) const { return difference(a, b).norm(); }

 private:
  std::vector<bool> mask_;
};

inline State make_state(std::initializer_list<double> v) {
  State x(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double c : v) x[i++] = c;
  return x;
}

}  // namespace koopdecomp

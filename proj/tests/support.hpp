#pragma once

// Shared fixtures and independent reference solutions for the test suites.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "koopdecomp/koopdecomp.hpp"

namespace testsupport {

using namespace koopdecomp;

inline const double kSqrt2 = std::numbers::sqrt2;

inline PrototypeQPD linear_damped(std::vector<double> omega, const std::string& warp = "none", double amplitude = 0.0,
                                  Params params = {}) {
  const int d = static_cast<int>(omega.size());
  PrototypeQPD p{d, omega, make_fiber("linear_damped", d, omega, params), std::nullopt};
  if (warp != "none") p.warp = make_warp(warp, d, p.fiber, amplitude);
  return p;
}

inline State random_point(const Chart& chart, std::mt19937_64& rng, double extent = 2.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  State x(chart.dim());
  for (int i = 0; i < chart.dim(); ++i) x[i] = chart.is_angle(i) ? kTwoPi * u(rng) : extent * (2.0 * u(rng) - 1.0);
  return x;
}

// Fine-step RK4 for a scalar non-autonomous ODE y' = f(s, y), written out separately from the library integrator.
inline double scalar_rk4(const std::function<double(double, double)>& f, double y, double t0, double t1,
                         int steps = 20000) {
  const double h = (t1 - t0) / steps;
  double s = t0;
  for (int i = 0; i < steps; ++i) {
    const double k1 = f(s, y);
    const double k2 = f(s + h / 2, y + h / 2 * k1);
    const double k3 = f(s + h / 2, y + h / 2 * k2);
    const double k4 = f(s + h, y + h * k3);
    y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    s += h;
  }
  return y;
}

// Distance of the unwarped fiber coordinate from the invariant graph of the linear-damped fiber.
inline double graph_deviation(const PrototypeQPD& p, const State& x) {
  const State u = p.unwarp(x);
  std::vector<double> theta(u.data(), u.data() + p.torus_dim);
  return u[p.torus_dim] - linear_damped_graph(theta, p.omega, param_or(p.fiber.params, "lambda", 1.0),
                                              param_or(p.fiber.params, "amplitude", 1.0));
}

}  // namespace testsupport

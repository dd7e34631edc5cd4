#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "koopdecomp/errors.hpp"
#include "koopdecomp/flow.hpp"
#include "koopdecomp/state.hpp"

namespace koopdecomp {

using Params = std::map<std::string, double>;

inline double param_or(const Params& p, const std::string& key, double fallback) {
  const auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

// Fiber dynamics G(theta, y); rhs receives the whole state (angles first) and returns the m fiber rates.
struct FiberModel {
  std::string name = "none";
  int dim = 0;
  std::vector<bool> angle_mask;
  FieldFn rhs;
  Params params;
};

// Diffeomorphism applied to the whole state; jacobian is DW at an unwarped point.
struct Warp {
  std::string kind = "none";
  FieldFn forward;
  FieldFn inverse;
  std::function<Matrix(const State&)> jacobian;
  double amplitude = 0.0;
};

struct PrototypeQPD {
  int torus_dim = 1;
  std::vector<double> omega;
  FiberModel fiber;
  std::optional<Warp> warp;

  int dim() const { return torus_dim + fiber.dim; }
  std::vector<bool> angle_mask() const {
    std::vector<bool> m(static_cast<std::size_t>(torus_dim), true);
    m.insert(m.end(), fiber.angle_mask.begin(), fiber.angle_mask.end());
    return m;
  }
  State unwarp(const State& u) const { return warp ? warp->inverse(u) : u; }
  State apply_warp(const State& x) const { return warp ? warp->forward(x) : x; }
};

// Bump with unit integral over the half period (0, pi); zero elsewhere.
inline double half_period_bump(double theta) {
  const double s = std::sin(theta);
  return s > 0.0 ? (8.0 / (3.0 * std::numbers::pi)) * s * s * s * s : 0.0;
}

// Attracting invariant graph y = gamma(theta) of the linear damped fiber.
inline double linear_damped_graph(std::span<const double> theta, std::span<const double> omega, double lambda,
                                  double amplitude) {
  const std::size_t d = theta.size();
  cplx sum = 0.0;
  for (unsigned mask = 0; mask < (1u << d); ++mask) {
    double phase = 0.0;
    double rate = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double s = (mask >> j) & 1u ? -1.0 : 1.0;
      phase += s * theta[j];
      rate += s * omega[j];
    }
    sum += std::polar(1.0, phase) / cplx(lambda, rate);
  }
  return amplitude * std::ldexp(sum.real(), -static_cast<int>(d));
}

inline FiberModel make_fiber(const std::string& name, int torus_dim, const std::vector<double>& omega,
                             const Params& params = {}) {
  FiberModel f;
  f.name = name;
  f.params = params;
  const int d = torus_dim;
  if (name == "none") {
    return f;
  }
  if (name == "linear_damped") {
    const double lambda = param_or(params, "lambda", 1.0);
    const double a = param_or(params, "amplitude", 1.0);
    f.dim = 1;
    f.angle_mask = {false};
    f.rhs = [d, lambda, a](const State& x) {
      double forcing = a;
      for (int j = 0; j < d; ++j) forcing *= std::cos(x[j]);
      State r(1);
      r[0] = -lambda * x[d] + forcing;
      return r;
    };
    return f;
  }
  if (name == "forced_pendulum_fiber") {
    const double damping = param_or(params, "damping", 0.5);
    const double forcing = param_or(params, "forcing", 1.5);
    f.dim = 2;
    f.angle_mask = {true, false};
    f.rhs = [d, damping, forcing](const State& x) {
      State r(2);
      r[0] = x[d + 1];
      r[1] = -damping * x[d + 1] - std::sin(x[d]) + forcing * std::cos(x[0]);
      return r;
    };
    return f;
  }
  if (name == "doubling_suspension") {
    // Two shears, one per half period; their composition over a period is the map (x,y) -> (2x+y, x+y).
    const double w = omega.at(0);
    f.dim = 2;
    f.angle_mask = {true, true};
    f.rhs = [d, w](const State& x) {
      State r(2);
      r[0] = w * half_period_bump(x[0] - std::numbers::pi) * x[d + 1];
      r[1] = w * half_period_bump(x[0]) * x[d];
      return r;
    };
    return f;
  }
  if (name == "rotation") {
    const double rate = param_or(params, "rate", (std::sqrt(5.0) - 1.0) / 2.0);
    f.dim = 1;
    f.angle_mask = {true};
    f.rhs = [rate](const State&) {
      State r(1);
      r[0] = rate;
      return r;
    };
    return f;
  }
  throw InvalidArgument("unknown fiber dynamics '" + name + "'");
}

inline std::vector<std::string> fiber_names() {
  return {"none", "linear_damped", "forced_pendulum_fiber", "doubling_suspension", "rotation"};
}

// shear: y1 += a sin(theta1).  twist: theta_j += a s(y1), s = sin for an angular y1 and tanh otherwise.
inline Warp make_warp(const std::string& kind, int torus_dim, const FiberModel& fiber, double amplitude) {
  Warp w;
  w.kind = kind;
  w.amplitude = amplitude;
  const int d = torus_dim;
  const int n = d + fiber.dim;
  if (kind == "none") {
    w.forward = [](const State& x) { return x; };
    w.inverse = [](const State& x) { return x; };
    w.jacobian = [n](const State&) { return Matrix::Identity(n, n); };
    return w;
  }
  if (fiber.dim < 1) throw InvalidArgument("warp '" + kind + "' needs a fiber coordinate");
  const double a = amplitude;
  if (kind == "shear") {
    w.forward = [d, a](State x) {
      x[d] += a * std::sin(x[0]);
      return x;
    };
    w.inverse = [d, a](State x) {
      x[d] -= a * std::sin(x[0]);
      return x;
    };
    w.jacobian = [d, n, a](const State& x) {
      Matrix j = Matrix::Identity(n, n);
      j(d, 0) = a * std::cos(x[0]);
      return j;
    };
    return w;
  }
  if (kind == "twist") {
    const bool periodic = fiber.angle_mask.front();
    auto profile = [periodic](double y) { return periodic ? std::sin(y) : std::tanh(y); };
    auto slope = [periodic](double y) {
      if (periodic) return std::cos(y);
      const double c = std::cosh(y);
      return std::isfinite(c) ? 1.0 / (c * c) : 0.0;
    };
    w.forward = [d, a, profile](State x) {
      const double s = a * profile(x[d]);
      for (int j = 0; j < d; ++j) x[j] += s;
      return x;
    };
    w.inverse = [d, a, profile](State x) {
      const double s = a * profile(x[d]);
      for (int j = 0; j < d; ++j) x[j] -= s;
      return x;
    };
    w.jacobian = [d, n, a, slope](const State& x) {
      Matrix j = Matrix::Identity(n, n);
      for (int i = 0; i < d; ++i) j(i, d) = a * slope(x[d]);
      return j;
    };
    return w;
  }
  throw InvalidArgument("unknown warp '" + kind + "'");
}

inline FlowSystem make_prototype(const PrototypeQPD& p, double step = kDefaultStep) {
  if (p.torus_dim < 1) throw InvalidArgument("torus dimension must be at least 1");
  if (static_cast<int>(p.omega.size()) != p.torus_dim)
    throw InvalidArgument("omega must have one entry per torus dimension");
  for (double w : p.omega)
    if (!std::isfinite(w) || w == 0.0) throw InvalidFrequency("frequency components must be finite and nonzero");
  if (p.fiber.dim > 0 && !p.fiber.rhs) throw InvalidArgument("fiber model has no right-hand side");

  const int d = p.torus_dim;
  const int n = p.dim();
  State omega(d);
  for (int j = 0; j < d; ++j) omega[j] = p.omega[static_cast<std::size_t>(j)];
  const FieldFn fiber = p.fiber.rhs;
  FieldFn skew = [d, n, omega, fiber](const State& x) {
    State v(n);
    v.head(d) = omega;
    if (n > d) v.tail(n - d) = fiber(x);
    return v;
  };
  VectorFieldSpec spec{Chart(p.angle_mask()), skew};
  if (p.warp && p.warp->kind != "none") {
    const Warp w = *p.warp;
    spec.eval = [w, skew](const State& u) {
      const State x = w.inverse(u);
      return State(w.jacobian(x) * skew(x));
    };
  }
  return FlowSystem(spec, step);
}

}  // namespace koopdecomp

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "koopdecomp/errors.hpp"
#include "koopdecomp/state.hpp"

namespace koopdecomp {

using FieldFn = std::function<State(const State&)>;

struct VectorFieldSpec {
  Chart chart;
  FieldFn eval;
};

inline constexpr double kDefaultStep = 1e-3;
inline constexpr double kBlowupThreshold = 1e12;
inline constexpr double kMaxStepCount = 1e9;

// A vector field together with a fixed-step classical RK4 integrator.
class FlowSystem {
 public:
  FlowSystem() = default;
  FlowSystem(VectorFieldSpec field, double step = kDefaultStep) : field_(std::move(field)), step_(step) {
    if (!(step_ > 0.0)) throw InvalidArgument("integrator step must be positive");
    if (!field_.eval) throw InvalidArgument("vector field has no evaluator");
  }

  const Chart& chart() const noexcept { return field_.chart; }
  int dim() const noexcept { return field_.chart.dim(); }
  double step() const noexcept { return step_; }
  const VectorFieldSpec& field() const noexcept { return field_; }

  State eval(const State& x) const { return field_.eval(x); }

  FlowSystem with_step(double step) const { return FlowSystem(field_, step); }

  State flow(State x, double t) const {
    if (x.size() != dim()) throw InvalidArgument("state dimension does not match the system");
    if (t == 0.0) return x;
    const double steps = std::ceil(std::abs(t) / step_);
    if (steps > kMaxStepCount) throw InvalidArgument("flow time too long for the integrator step");
    const auto n = static_cast<long long>(steps);
    const double h = t / static_cast<double>(n);
    const Chart& c = chart();
    for (long long i = 0; i < n; ++i) {
      const State k1 = field_.eval(x);
      const State k2 = field_.eval(x + 0.5 * h * k1);
      const State k3 = field_.eval(x + 0.5 * h * k2);
      const State k4 = field_.eval(x + h * k3);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      c.wrap(x);
      if (!finite_and_bounded(x)) throw IntegrationBlowup(static_cast<double>(i + 1) * h);
    }
    return x;
  }

  // Samples x(0), x(dt), ..., x(count*dt).
  std::vector<State> trajectory(State x, double dt, std::size_t count) const {
    std::vector<State> out;
    out.reserve(count + 1);
    out.push_back(x);
    for (std::size_t i = 0; i < count; ++i) {
      try {
        x = flow(x, dt);
      } catch (const IntegrationBlowup& e) {
        throw IntegrationBlowup(static_cast<double>(i) * dt + e.time());
      }
      out.push_back(x);
    }
    return out;
  }

 private:
  static bool finite_and_bounded(const State& x) {
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (!std::isfinite(x[i]) || std::abs(x[i]) > kBlowupThreshold) return false;
    return true;
  }

  VectorFieldSpec field_;
  double step_ = kDefaultStep;
};

inline std::vector<State> flow_map_batch(const FlowSystem& sys, std::span<const State> points, double t) {
  std::vector<State> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    try {
      out.push_back(sys.flow(points[i], t));
    } catch (const IntegrationBlowup& e) {
      throw IntegrationBlowup(e.time(), static_cast<std::ptrdiff_t>(i));
    }
  }
  return out;
}

// Image of a tangent vector v at x under the time-t flow, by central differences of the flow map.
inline State push_forward(const FlowSystem& sys, const State& x, const State& v, double t, double h = 1e-5) {
  const double scale = v.norm();
  if (scale == 0.0) return State::Zero(sys.dim());
  const double eps = h / scale;
  const State plus = sys.flow(x + eps * v, t);
  const State minus = sys.flow(x - eps * v, t);
  return sys.chart().difference(plus, minus) / (2.0 * eps);
}

}  // namespace koopdecomp

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "koopdecomp/eigenfunctions.hpp"
#include "koopdecomp/errors.hpp"
#include "koopdecomp/prototype.hpp"

namespace koopdecomp {

struct NamedObservable {
  std::string label;
  Observable f;
};

// Registry observables are read in unwarped coordinates: angles theta_1..theta_d, then the fiber.
inline NamedObservable make_observable(const std::string& name, const PrototypeQPD& p) {
  const int d = p.torus_dim;
  const int m = p.fiber.dim;
  const bool warped = p.warp && p.warp->kind != "none";
  const FieldFn inverse = warped ? p.warp->inverse : FieldFn{};
  auto on_internal = [inverse](auto g) -> Observable {
    if (!inverse) return [g](const State& u) { return cplx(g(u)); };
    return [g, inverse](const State& u) { return cplx(g(inverse(u))); };
  };
  auto need_fiber = [&] {
    if (m < 1) throw InvalidArgument("observable '" + name + "' needs a fiber coordinate");
  };
  auto angle_sum = [d](const State& x) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += x[j];
    return s;
  };
  auto angle_alt = [d](const State& x) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += (j % 2 ? -1.0 : 1.0) * x[j];
    return s;
  };

  if (name == "one") return {name, [](const State&) { return cplx(1.0); }};
  if (name == "fiber") {
    need_fiber();
    return {name, on_internal([d](const State& x) { return x[d]; })};
  }
  if (name == "fiber_sq") {
    need_fiber();
    return {name, on_internal([d](const State& x) { return x[d] * x[d]; })};
  }
  if (name == "cos_fiber") {
    need_fiber();
    return {name, on_internal([d](const State& x) { return std::cos(x[d]); })};
  }
  if (name == "fiber_cos_sum") {
    need_fiber();
    return {name, on_internal([d, angle_sum](const State& x) { return x[d] * std::cos(angle_sum(x)); })};
  }
  if (name == "fiber_sin_sum") {
    need_fiber();
    return {name, on_internal([d, angle_sum](const State& x) { return x[d] * std::sin(angle_sum(x)); })};
  }
  if (name == "fiber_cos_diff") {
    need_fiber();
    return {name, on_internal([d, angle_alt](const State& x) { return x[d] * std::cos(angle_alt(x)); })};
  }
  if (name == "fiber_velocity") {
    if (m < 2) throw InvalidArgument("observable 'fiber_velocity' needs two fiber coordinates");
    return {name, on_internal([d](const State& x) { return x[d + 1]; })};
  }
  if (name == "z_sum") {
    return {name, on_internal([d](const State& x) {
              cplx s = 0.0;
              for (int j = 0; j < d; ++j) s += std::polar(1.0, x[j]);
              return s;
            })};
  }
  for (int j = 0; j < d; ++j) {
    if (name == "z" + std::to_string(j + 1)) {
      if (!inverse) return {name, [j](const State& x) { return std::polar(1.0, x[j]); }};
      return {name, [inverse, j](const State& u) { return std::polar(1.0, inverse(u)[j]); }};
    }
  }
  throw InvalidArgument("unknown observable '" + name + "'");
}

inline std::vector<std::string> observable_names() {
  return {"one",           "fiber",          "fiber_sq",       "cos_fiber", "fiber_cos_sum",
          "fiber_sin_sum", "fiber_cos_diff", "fiber_velocity", "z_sum",     "z<j>"};
}

// cos/sin(k x_i) for k = 1..kmax on every angle coordinate, x_i and x_i^2 on every line coordinate.
inline std::vector<NamedObservable> fourier_basis(const Chart& chart, int kmax, bool fiber_moments = true) {
  std::vector<NamedObservable> basis;
  for (int i = 0; i < chart.dim(); ++i) {
    const std::string c = std::to_string(i + 1);
    if (chart.is_angle(i)) {
      for (int k = 1; k <= kmax; ++k) {
        basis.push_back({"cos" + std::to_string(k) + "_x" + c, [i, k](const State& x) { return cplx(std::cos(k * x[i])); }});
        basis.push_back({"sin" + std::to_string(k) + "_x" + c, [i, k](const State& x) { return cplx(std::sin(k * x[i])); }});
      }
    } else if (fiber_moments) {
      basis.push_back({"x" + c, [i](const State& x) { return cplx(x[i]); }});
      basis.push_back({"x" + c + "_sq", [i](const State& x) { return cplx(x[i] * x[i]); }});
    }
  }
  return basis;
}

}  // namespace koopdecomp

#pragma once

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "koopdecomp/errors.hpp"
#include "koopdecomp/flow.hpp"
#include "koopdecomp/prototype.hpp"
#include "koopdecomp/state.hpp"

namespace koopdecomp {

using Observable = std::function<cplx(const State&)>;

struct CircleEigenfunction {
  Observable eval;
  double omega = 0.0;
  std::string label;

  cplx operator()(const State& x) const { return eval(x); }
  double phase(const State& x) const { return std::arg(eval(x)); }
};

struct FrequencyModule {
  std::vector<double> omegas;
  int independence_bound = 20;
  double independence_margin = 1e-6;
};

struct HarmonicAverageResult {
  cplx value;
  double T_used = 0.0;
  std::vector<std::pair<double, double>> convergence_curve;
};

// z_j = exp(i theta_j) read off in unwarped coordinates.
inline std::vector<CircleEigenfunction> analytic_eigenfunctions(const PrototypeQPD& p) {
  std::vector<CircleEigenfunction> zs;
  for (int j = 0; j < p.torus_dim; ++j) {
    CircleEigenfunction z;
    z.omega = p.omega[static_cast<std::size_t>(j)];
    z.label = "z" + std::to_string(j + 1);
    if (p.warp && p.warp->kind != "none") {
      const FieldFn inverse = p.warp->inverse;
      z.eval = [inverse, j](const State& u) { return std::polar(1.0, inverse(u)[j]); };
    } else {
      z.eval = [j](const State& x) { return std::polar(1.0, x[j]); };
    }
    zs.push_back(std::move(z));
  }
  return zs;
}

// f sampled at t = 0, dt, ..., n*dt along one trajectory.
struct SampledSeries {
  double dt = 0.0;
  std::vector<cplx> values;
  double duration() const { return values.empty() ? 0.0 : dt * static_cast<double>(values.size() - 1); }
};

inline SampledSeries sample_observable(const FlowSystem& sys, const Observable& f, State x, double T, double dt) {
  if (!(dt > 0.0) || !(T > 0.0)) throw InvalidArgument("sampling interval and duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(T / dt));
  if (n == 0) throw InvalidArgument("duration shorter than the sampling interval");
  SampledSeries s;
  s.dt = dt;
  s.values.reserve(n + 1);
  s.values.push_back(f(x));
  for (std::size_t i = 0; i < n; ++i) {
    try {
      x = sys.flow(x, dt);
    } catch (const IntegrationBlowup& e) {
      throw IntegrationBlowup(static_cast<double>(i) * dt + e.time());
    }
    s.values.push_back(f(x));
  }
  return s;
}

// Trapezoidal (1/T) int_0^T exp(-i omega t) f dt over the first count+1 samples.
inline cplx harmonic_sum(const SampledSeries& s, double omega, std::size_t count) {
  if (count == 0) return s.values.front();
  cplx acc = 0.0;
  for (std::size_t k = 0; k <= count; ++k) {
    const double w = (k == 0 || k == count) ? 0.5 : 1.0;
    acc += w * s.values[k] * std::polar(1.0, -omega * s.dt * static_cast<double>(k));
  }
  return acc / static_cast<double>(count);
}

inline cplx harmonic_sum(const SampledSeries& s, double omega) { return harmonic_sum(s, omega, s.values.size() - 1); }

inline void check_harmonic_preconditions(const FlowSystem& sys, double omega_test, double T, double dt_sample) {
  if (omega_test != 0.0 && T < 100.0 * kTwoPi / std::abs(omega_test))
    throw InvalidArgument("averaging window shorter than 100 periods of the test frequency");
  if (dt_sample > sys.step() * 1e3) throw InvalidArgument("sampling interval exceeds 1000 integrator steps");
}

inline HarmonicAverageResult harmonic_average(const FlowSystem& sys, const Observable& f, const State& x,
                                              double omega_test, double T, double dt_sample,
                                              std::size_t checkpoints = 20) {
  check_harmonic_preconditions(sys, omega_test, T, dt_sample);
  const SampledSeries s = sample_observable(sys, f, x, T, dt_sample);
  HarmonicAverageResult r;
  const std::size_t n = s.values.size() - 1;
  r.value = harmonic_sum(s, omega_test, n);
  r.T_used = s.duration();
  checkpoints = std::max<std::size_t>(1, std::min(checkpoints, n));
  for (std::size_t c = 1; c <= checkpoints; ++c) {
    const std::size_t m = n * c / checkpoints;
    r.convergence_curve.emplace_back(s.dt * static_cast<double>(m), std::abs(harmonic_sum(s, omega_test, m)));
  }
  return r;
}

namespace detail {

inline std::size_t smooth_fft_size(std::size_t n) {
  for (std::size_t m = std::max<std::size_t>(n, 1);; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

// Maximizes g over [a, b] by golden-section search down to the given width.
template <class F>
double golden_maximize(F&& g, double a, double b, double width) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double gc = g(c);
  double gd = g(d);
  while (b - a > width) {
    if (gc > gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - inv_phi * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + inv_phi * (b - a);
      gd = g(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

// Frequencies of the largest harmonic-average peaks of a centered series, refined by golden section.
inline std::vector<double> detect_frequencies(const SampledSeries& raw, std::size_t count) {
  if (raw.values.size() < 3 || count == 0) return {};
  SampledSeries s = raw;
  const cplx mean = std::accumulate(s.values.begin(), s.values.end(), cplx(0.0)) / static_cast<double>(s.values.size());
  for (auto& v : s.values) v -= mean;

  const std::size_t n = s.values.size() - 1;
  const std::size_t len = detail::smooth_fft_size(2 * n);
  std::vector<cplx> padded(len, cplx(0.0));
  std::copy(s.values.begin(), s.values.end(), padded.begin());
  std::vector<cplx> spectrum;
  Eigen::FFT<double> fft;
  fft.fwd(spectrum, padded);

  const double spacing = kTwoPi / (static_cast<double>(len) * s.dt);
  auto frequency = [&](std::size_t k) {
    const auto sk = static_cast<double>(k);
    return k < len / 2 ? sk * spacing : (sk - static_cast<double>(len)) * spacing;
  };
  std::vector<double> mag(len);
  for (std::size_t k = 0; k < len; ++k) mag[k] = std::abs(spectrum[k]) / static_cast<double>(n);

  const double floor = 5.0 / std::sqrt(static_cast<double>(n));
  std::vector<std::size_t> peaks;
  for (std::size_t k = 1; k < len; ++k) {
    const double left = mag[k - 1];
    const double right = mag[(k + 1) % len];
    if (mag[k] > floor && mag[k] >= left && mag[k] > right) peaks.push_back(k);
  }
  std::sort(peaks.begin(), peaks.end(), [&](std::size_t a, std::size_t b) { return mag[a] > mag[b]; });
  if (peaks.size() > count) peaks.resize(count);

  std::vector<double> out;
  for (std::size_t k : peaks) {
    const double w0 = frequency(k);
    out.push_back(detail::golden_maximize([&](double w) { return std::abs(harmonic_sum(s, w)); }, w0 - spacing,
                                          w0 + spacing, 1e-6));
  }
  return out;
}

inline std::vector<double> detect_frequencies(const FlowSystem& sys, const Observable& f, const State& x, double T,
                                              double dt_sample, std::size_t count) {
  check_harmonic_preconditions(sys, 0.0, T, dt_sample);
  return detect_frequencies(sample_observable(sys, f, x, T, dt_sample), count);
}

// Exhaustive scan for a in [-A, A]^d \ 0 with |a.omega - 2 pi k| < eps for some |k| <= A (k = 0 included).
// The reported relation has minimal l1 norm and a positive leading entry.
inline FrequencyModule check_independence(std::span<const double> omegas, int bound = 20, double eps = 1e-6) {
  const auto d = omegas.size();
  if (d == 0) throw InvalidArgument("no frequencies to certify");
  if (bound < 0) throw InvalidArgument("independence bound must be nonnegative");
  const double cells = std::pow(2.0 * bound + 1.0, static_cast<double>(d));
  if (cells > 1e8) throw InvalidArgument("independence scan too large; lower the bound");

  std::vector<int> a(d, -bound);
  std::vector<int> best;
  int best_k = 0;
  int best_norm = std::numeric_limits<int>::max();
  for (;;) {
    int norm = 0;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      norm += std::abs(a[j]);
      s += a[j] * omegas[j];
    }
    if (norm > 0 && norm < best_norm) {
      const double k = std::round(s / kTwoPi);
      if (std::abs(k) <= bound && std::abs(s - kTwoPi * k) < eps) {
        best = a;
        best_k = static_cast<int>(k);
        best_norm = norm;
      }
    }
    std::size_t j = 0;
    while (j < d && a[j] == bound) a[j++] = -bound;
    if (j == d) break;
    ++a[j];
  }
  if (!best.empty()) {
    const auto lead = std::find_if(best.begin(), best.end(), [](int v) { return v != 0; });
    if (*lead < 0) {
      for (int& v : best) v = -v;
      best_k = -best_k;
    }
    throw DependentFrequencies(best, best_k);
  }
  return FrequencyModule{std::vector<double>(omegas.begin(), omegas.end()), bound, eps};
}

inline CircleEigenfunction product_eigenfunction(const std::vector<CircleEigenfunction>& zs, const std::vector<int>& a) {
  if (a.size() != zs.size()) throw InvalidArgument("exponent vector length must match the eigenfunction list");
  CircleEigenfunction out;
  std::string label;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (std::abs(a[j]) > 100) throw InvalidArgument("exponents are limited to |a_j| <= 100");
    out.omega += a[j] * zs[j].omega;
    if (a[j] != 0) label += (label.empty() ? "" : "*") + zs[j].label + "^" + std::to_string(a[j]);
  }
  out.label = label.empty() ? "one" : label;
  out.eval = [zs, a](const State& x) {
    double phase = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j)
      if (a[j] != 0) phase += a[j] * std::arg(zs[j].eval(x));
    return std::polar(1.0, phase);
  };
  return out;
}

// max over samples of |z(flow(x,t)) - exp(i omega t) z(x)|.
inline double eigenfunction_residual(const FlowSystem& sys, const CircleEigenfunction& z,
                                     std::span<const std::pair<State, double>> samples) {
  double worst = 0.0;
  for (const auto& [x, t] : samples)
    worst = std::max(worst, std::abs(z(sys.flow(x, t)) - std::polar(1.0, z.omega * t) * z(x)));
  return worst;
}

}  // namespace koopdecomp

#pragma once

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "koopdecomp/eigenfunctions.hpp"
#include "koopdecomp/errors.hpp"
#include "koopdecomp/observables.hpp"
#include "koopdecomp/state.hpp"

namespace koopdecomp {

struct CorrelationSequence {
  std::vector<cplx> values;
  std::string f_label;
  std::string g_label;
  bool centered = true;
  // Pairs behind the least-supported lag.
  std::size_t samples = 0;
  double f_norm = 0.0;
  double g_norm = 0.0;
  // Time between consecutive lags.
  double lag_step = 1.0;

  std::size_t lags() const { return values.empty() ? 0 : values.size() - 1; }
  double noise_floor() const {
    return samples == 0 ? 0.0 : 4.0 * f_norm * g_norm / std::sqrt(static_cast<double>(samples));
  }
};

// Streams orbits into lagged sums for C(n) = <f o T^n, g> - <f><g>.
// Anchored orbits contribute only pairs starting at their first point, which suits many short i.i.d. orbits.
class CorrelationAccumulator {
 public:
  explicit CorrelationAccumulator(std::size_t lags)
      : fg_(lags + 1, 0.0), f_(lags + 1, 0.0), g_(lags + 1, 0.0), count_(lags + 1, 0) {}

  std::size_t lags() const noexcept { return fg_.size() - 1; }

  void add_orbit(std::span<const cplx> f, std::span<const cplx> g, bool anchored = false) {
    if (f.size() != g.size()) throw InvalidArgument("observable series lengths differ");
    const std::size_t len = f.size();
    for (std::size_t n = 0; n <= lags() && n < len; ++n) {
      const std::size_t last = anchored ? 1 : len - n;
      for (std::size_t k = 0; k < last; ++k) {
        fg_[n] += f[k + n] * std::conj(g[k]);
        f_[n] += f[k + n];
        g_[n] += g[k];
        ++count_[n];
      }
    }
    for (std::size_t k = 0; k < (anchored ? std::min<std::size_t>(len, lags() + 1) : len); ++k) {
      sf_ += f[k];
      sg_ += g[k];
      sff_ += std::norm(f[k]);
      sgg_ += std::norm(g[k]);
      ++norm_count_;
    }
  }

  CorrelationSequence result(bool centered = true, std::string f_label = "f", std::string g_label = "g",
                             double lag_step = 1.0) const {
    CorrelationSequence s;
    s.f_label = std::move(f_label);
    s.g_label = std::move(g_label);
    s.centered = centered;
    s.lag_step = lag_step;
    s.samples = std::numeric_limits<std::size_t>::max();
    for (std::size_t n = 0; n <= lags(); ++n) {
      const auto c = static_cast<double>(count_[n]);
      if (count_[n] == 0) throw InvalidArgument("orbits too short for the requested lags");
      cplx v = fg_[n] / c;
      if (centered) v -= (f_[n] / c) * std::conj(g_[n] / c);
      s.values.push_back(v);
      s.samples = std::min(s.samples, count_[n]);
    }
    const auto m = static_cast<double>(norm_count_);
    const double vf = sff_ / m - (centered ? std::norm(sf_ / m) : 0.0);
    const double vg = sgg_ / m - (centered ? std::norm(sg_ / m) : 0.0);
    s.f_norm = std::sqrt(std::max(0.0, vf));
    s.g_norm = std::sqrt(std::max(0.0, vg));
    return s;
  }

 private:
  std::vector<cplx> fg_, f_, g_;
  std::vector<std::size_t> count_;
  cplx sf_ = 0.0, sg_ = 0.0;
  double sff_ = 0.0, sgg_ = 0.0;
  std::size_t norm_count_ = 0;
};

template <class Point, class Map>
std::vector<Point> iterate_map(const Map& map, Point x, std::size_t n) {
  std::vector<Point> orbit;
  orbit.reserve(n + 1);
  orbit.push_back(x);
  for (std::size_t i = 0; i < n; ++i) orbit.push_back(x = map(x));
  return orbit;
}

template <class Point, class F>
std::vector<cplx> evaluate_series(const F& f, std::span<const Point> orbit) {
  std::vector<cplx> v;
  v.reserve(orbit.size());
  for (const Point& p : orbit) v.push_back(cplx(f(p)));
  return v;
}

// Correlation along one long orbit of a map.
template <class Point, class Map, class F, class G>
CorrelationSequence correlation_sequence(const Map& map, const F& f, const G& g, const Point& x0, std::size_t orbit_length,
                                         std::size_t lags, bool centered = true, std::string f_label = "f",
                                         std::string g_label = "g") {
  if (lags * 10 > orbit_length) throw InvalidArgument("lags must not exceed a tenth of the orbit length");
  const std::vector<Point> orbit = iterate_map(map, x0, orbit_length - 1);
  CorrelationAccumulator acc(lags);
  acc.add_orbit(evaluate_series<Point>(f, orbit), evaluate_series<Point>(g, orbit));
  return acc.result(centered, std::move(f_label), std::move(g_label));
}

// Correlation averaged over short orbits from independent starting points.
template <class Point, class Map, class F, class G>
CorrelationSequence correlation_sequence_iid(const Map& map, const F& f, const G& g, std::span<const Point> starts,
                                             std::size_t lags, bool centered = true, std::string f_label = "f",
                                             std::string g_label = "g") {
  CorrelationAccumulator acc(lags);
  for (const Point& x0 : starts) {
    const std::vector<Point> orbit = iterate_map(map, x0, lags);
    acc.add_orbit(evaluate_series<Point>(f, orbit), evaluate_series<Point>(g, orbit), true);
  }
  return acc.result(centered, std::move(f_label), std::move(g_label));
}

enum class Verdict { mixing_consistent, non_mixing, inconclusive };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::mixing_consistent: return "mixing-consistent";
    case Verdict::non_mixing: return "non-mixing";
    default: return "inconclusive";
  }
}

// model: "exponential" (rate = decay constant), "power" (rate = exponent), or "below-noise".
struct DecayFit {
  std::string model = "below-noise";
  double rate = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
  double exponential_r2 = std::numeric_limits<double>::quiet_NaN();
  double power_r2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t points = 0;
  double floor = 0.0;
};

struct MixingVerdict {
  double statistic = 0.0;
  double mixing_threshold = 0.0;
  double non_mixing_threshold = 0.1;
  Verdict verdict = Verdict::inconclusive;
  DecayFit fit;
};

struct WeakMixingThresholds {
  double noise_scale = 4.0;
  double slack = 0.01;
  double non_mixing = 0.1;
  std::size_t min_lags = 100;
};

// W(N) = (1/N) sum_{n=1..N} |C(n)|^2 against 4/sqrt(M) + 0.01 and 0.1.
inline MixingVerdict weak_mixing_test(const CorrelationSequence& seq, const WeakMixingThresholds& th = {}) {
  const std::size_t N = seq.lags();
  if (N < th.min_lags) throw InvalidArgument("weak-mixing test needs at least " + std::to_string(th.min_lags) + " lags");
  MixingVerdict v;
  double acc = 0.0;
  for (std::size_t n = 1; n <= N; ++n) acc += std::norm(seq.values[n]);
  v.statistic = acc / static_cast<double>(N);
  v.mixing_threshold = th.noise_scale / std::sqrt(static_cast<double>(std::max<std::size_t>(seq.samples, 1))) + th.slack;
  v.non_mixing_threshold = th.non_mixing;
  if (v.statistic <= v.mixing_threshold)
    v.verdict = Verdict::mixing_consistent;
  else if (v.statistic >= v.non_mixing_threshold)
    v.verdict = Verdict::non_mixing;
  else
    v.verdict = Verdict::inconclusive;
  return v;
}

namespace detail {

// Least squares line through points: slope, intercept, r^2.
inline std::tuple<double, double, double> line_fit(const std::vector<std::pair<double, double>>& pts) {
  const auto n = static_cast<double>(pts.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  const double r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return {slope, my - slope * mx, r2};
}

}  // namespace detail

struct RateFitOptions {
  std::size_t min_lags = 30;
  // Negative: use the sequence's own noise floor.
  double floor = -1.0;
};

// Model choice: least squares of log|C| against lag (exponential) and log lag (power)
// over every point above the floor; the better r^2 wins. The rate comes from the
// same regression restricted to the envelope, the points no later lag exceeds.
inline DecayFit fit_mixing_rate(const CorrelationSequence& seq, const RateFitOptions& opt = {}) {
  DecayFit fit;
  fit.floor = opt.floor >= 0.0 ? opt.floor : seq.noise_floor();
  std::vector<std::pair<double, double>> lin, log;
  for (std::size_t n = 1; n < seq.values.size(); ++n) {
    const double c = std::abs(seq.values[n]);
    if (!(c > fit.floor) || c == 0.0) continue;
    const double t = static_cast<double>(n) * seq.lag_step;
    lin.emplace_back(t, std::log(c));
    log.emplace_back(std::log(t), std::log(c));
  }
  fit.points = lin.size();
  if (lin.size() < std::max<std::size_t>(opt.min_lags, 3)) return fit;

  std::vector<bool> on_envelope(lin.size(), false);
  double later = -std::numeric_limits<double>::infinity();
  std::size_t kept = 0;
  for (std::size_t i = lin.size(); i-- > 0;) {
    if (lin[i].second >= later) {
      on_envelope[i] = true;
      later = lin[i].second;
      ++kept;
    }
  }
  auto envelope = [&](const std::vector<std::pair<double, double>>& pts) {
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (on_envelope[i]) out.push_back(pts[i]);
    return out;
  };

  const double exp_r2 = std::get<2>(detail::line_fit(lin));
  const double pow_r2 = std::get<2>(detail::line_fit(log));
  fit.exponential_r2 = exp_r2;
  fit.power_r2 = pow_r2;
  const bool exponential = exp_r2 >= pow_r2;
  fit.model = exponential ? "exponential" : "power";
  fit.r2 = exponential ? exp_r2 : pow_r2;
  if (kept < 2) {
    fit.rate = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  const double slope = std::get<0>(detail::line_fit(envelope(exponential ? lin : log)));
  fit.rate = exponential ? -slope : slope;
  return fit;
}

struct BasisScan {
  std::vector<std::string> labels;
  std::vector<std::vector<MixingVerdict>> pairs;
  Verdict overall = Verdict::inconclusive;
};

// Pairwise verdicts for a basis evaluated along the given orbits; overall verdict is mixing-consistent iff every pair is.
template <class Point>
BasisScan basis_mixing_scan(std::span<const std::vector<Point>> orbits, std::span<const NamedObservable> basis,
                            std::size_t lags, bool anchored = false, const WeakMixingThresholds& th = {},
                            const RateFitOptions& fit = {}) {
  if (basis.empty() || basis.size() > 50) throw InvalidArgument("basis size must be in [1, 50]");
  std::vector<std::vector<std::vector<cplx>>> series(basis.size());
  for (std::size_t i = 0; i < basis.size(); ++i)
    for (const auto& orbit : orbits) series[i].push_back(evaluate_series<Point>(basis[i].f, std::span<const Point>(orbit)));
  BasisScan scan;
  bool all_mixing = true;
  bool any_non = false;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    scan.labels.push_back(basis[i].label);
    std::vector<MixingVerdict> row;
    for (std::size_t j = 0; j < basis.size(); ++j) {
      CorrelationAccumulator acc(lags);
      for (std::size_t p = 0; p < orbits.size(); ++p) acc.add_orbit(series[i][p], series[j][p], anchored);
      const CorrelationSequence seq = acc.result(true, basis[i].label, basis[j].label);
      MixingVerdict v = weak_mixing_test(seq, th);
      v.fit = fit_mixing_rate(seq, fit);
      all_mixing = all_mixing && v.verdict == Verdict::mixing_consistent;
      any_non = any_non || v.verdict == Verdict::non_mixing;
      row.push_back(v);
    }
    scan.pairs.push_back(std::move(row));
  }
  scan.overall = all_mixing ? Verdict::mixing_consistent : any_non ? Verdict::non_mixing : Verdict::inconclusive;
  return scan;
}

// Smooth bump exp(-1/(u(1-u))) on the midpoints u = (n + 1/2)/N.
inline std::vector<double> bump_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    w[i] = std::exp(-1.0 / (u * (1.0 - u)));
  }
  return w;
}

struct ProbeTable {
  std::vector<double> beta;
  std::vector<double> value;
  std::vector<double> null_value;
  std::vector<std::string> argmax_label;
  std::vector<double> peaks;
  double threshold = 0.0;
  std::size_t orbit_length = 0;
  std::size_t orbits = 0;

  double max_value() const { return value.empty() ? 0.0 : *std::max_element(value.begin(), value.end()); }
  double max_null() const { return null_value.empty() ? 0.0 : *std::max_element(null_value.begin(), null_value.end()); }
};

namespace detail {

// |windowed harmonic average| of each orbit series on the grid beta_k = 2 pi k / L, averaged over orbits.
inline std::vector<double> windowed_spectrum(const std::vector<std::vector<cplx>>& series, bool centered, std::size_t len) {
  std::vector<double> out(len, 0.0);
  Eigen::FFT<double> fft;
  for (const auto& s : series) {
    const std::vector<double> w = bump_window(s.size());
    const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    cplx mean = 0.0;
    if (centered) {
      for (std::size_t i = 0; i < s.size(); ++i) mean += w[i] * s[i];
      mean /= wsum;
    }
    std::vector<cplx> buf(len, 0.0), spec;
    for (std::size_t i = 0; i < s.size(); ++i) buf[i] = w[i] * (s[i] - mean);
    fft.fwd(spec, buf);
    for (std::size_t k = 0; k < len; ++k) out[k] += std::abs(spec[k]) / wsum;
  }
  for (double& v : out) v /= static_cast<double>(series.size());
  return out;
}

}  // namespace detail

// For each beta on a grid of spacing at most pi/N: max over basis observables of the orbit-averaged modulus of
// the bump-windowed harmonic average. The same statistic on shuffled orbits gives the null level.
template <class Point>
ProbeTable return_map_spectrum_probe(std::span<const std::vector<Point>> orbits, std::span<const NamedObservable> basis,
                                     std::uint64_t seed, bool centered = true) {
  if (orbits.empty() || basis.empty()) throw InvalidArgument("probe needs orbits and observables");
  const std::size_t N = orbits.front().size();
  for (const auto& o : orbits)
    if (o.size() != N) throw InvalidArgument("probe orbits must share a length");
  const std::size_t len = detail::smooth_fft_size(2 * N);
  ProbeTable t;
  t.orbit_length = N;
  t.orbits = orbits.size();
  t.threshold = 4.0 / std::sqrt(static_cast<double>(N));
  t.value.assign(len, 0.0);
  t.null_value.assign(len, 0.0);
  t.argmax_label.assign(len, "");
  for (std::size_t k = 0; k < len; ++k) t.beta.push_back(kTwoPi * static_cast<double>(k) / static_cast<double>(len));

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> perms;
  for (std::size_t p = 0; p < orbits.size(); ++p) {
    std::vector<std::size_t> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    perms.push_back(std::move(perm));
  }
  for (const auto& f : basis) {
    std::vector<std::vector<cplx>> series, shuffled;
    for (std::size_t p = 0; p < orbits.size(); ++p) {
      series.push_back(evaluate_series<Point>(f.f, std::span<const Point>(orbits[p])));
      std::vector<cplx> s(N);
      for (std::size_t i = 0; i < N; ++i) s[i] = series.back()[perms[p][i]];
      shuffled.push_back(std::move(s));
    }
    const std::vector<double> v = detail::windowed_spectrum(series, centered, len);
    const std::vector<double> nv = detail::windowed_spectrum(shuffled, centered, len);
    for (std::size_t k = 0; k < len; ++k) {
      if (v[k] > t.value[k]) {
        t.value[k] = v[k];
        t.argmax_label[k] = f.label;
      }
      t.null_value[k] = std::max(t.null_value[k], nv[k]);
    }
  }
  for (std::size_t k = 0; k < len; ++k) {
    const double left = t.value[(k + len - 1) % len];
    const double right = t.value[(k + 1) % len];
    if (t.value[k] > t.threshold && t.value[k] >= left && t.value[k] > right) t.peaks.push_back(t.beta[k]);
  }
  return t;
}

// Probe value at given angles beta, exact windowed sums rather than the FFT grid.
template <class Point>
std::vector<double> probe_at(std::span<const std::vector<Point>> orbits, std::span<const NamedObservable> basis,
                             std::span<const double> betas, bool centered = true) {
  std::vector<double> out(betas.size(), 0.0);
  for (const auto& f : basis) {
    std::vector<double> acc(betas.size(), 0.0);
    for (const auto& orbit : orbits) {
      const std::vector<cplx> s = evaluate_series<Point>(f.f, std::span<const Point>(orbit));
      const std::vector<double> w = bump_window(s.size());
      const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
      cplx mean = 0.0;
      if (centered) {
        for (std::size_t i = 0; i < s.size(); ++i) mean += w[i] * s[i];
        mean /= wsum;
      }
      for (std::size_t b = 0; b < betas.size(); ++b) {
        cplx a = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) a += w[i] * (s[i] - mean) * std::polar(1.0, -betas[b] * static_cast<double>(i));
        acc[b] += std::abs(a) / wsum;
      }
    }
    for (std::size_t b = 0; b < betas.size(); ++b) out[b] = std::max(out[b], acc[b] / static_cast<double>(orbits.size()));
  }
  return out;
}

// Standalone test maps on [0, 2pi).
inline double doubling_map(double theta) { return wrap_angle(2.0 * theta); }

// x -> 2x mod 1 on [0,1). Doubling drops the leading binary digit; the trailing digit, which a double cannot
// carry forward, is drawn fresh, so the orbit is that of a Lebesgue-random point and never collapses onto 0.
class UnitDoubling {
 public:
  explicit UnitDoubling(std::uint64_t seed = 0) : rng_(seed) {}
  double operator()(double x) const {
    const double y = 2.0 * x;
    const double frac = y >= 1.0 ? y - 1.0 : y;
    return frac + static_cast<double>(rng_() >> 63) * 0x1p-53;
  }

 private:
  mutable std::mt19937_64 rng_;
};

struct CircleRotation {
  double angle;
  double operator()(double theta) const { return wrap_angle(theta + angle); }
};

}  // namespace koopdecomp

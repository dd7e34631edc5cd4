#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "koopdecomp/eigenfunctions.hpp"
#include "koopdecomp/errors.hpp"
#include "koopdecomp/flow.hpp"
#include "koopdecomp/geometry.hpp"
#include "koopdecomp/state.hpp"

namespace koopdecomp {

// pointwise: gradients from the metric at the point itself.
// adapted: frames transported by the flow from time -horizon, which makes them flow-invariant in the limit.
enum class FramePolicy { pointwise, adapted };

struct DeconstructionOptions {
  FramePolicy frames = FramePolicy::pointwise;
  double horizon = 12.0;
  ProjectionRule rule = ProjectionRule::frequency;
  double fd_step = kDefaultFdStep;
  double leaf_tolerance = 1e-8;
};

// Stage flows Phi_0 (the flow itself) .. Phi_d, where Phi_k is generated by V_k.
// Under the adapted policy Phi_k = Phi^T o Phi_k^pointwise o Phi^-T, and the work is done in
// "reference" coordinates w = Phi^-T x where eigenfunction phases are shifted by -omega_j T.
class LaminarFlows {
 public:
  LaminarFlows(FlowSystem sys, std::vector<CircleEigenfunction> zs, DeconstructionOptions opt = {},
               std::optional<MetricSpec> base = std::nullopt)
      : fields_(sys, std::move(zs), base ? *base : MetricSpec::euclidean(sys.dim()), opt.rule, opt.fd_step), opt_(opt) {
    if (opt_.frames == FramePolicy::adapted && !(opt_.horizon > 0.0))
      throw InvalidArgument("adapted frames need a positive horizon");
    for (const auto& z : fields_.eigenfunctions())
      if (z.omega == 0.0) throw InvalidFrequency("eigenfunction " + z.label + " has zero frequency");
    for (int k = 0; k <= depth(); ++k) pointwise_.push_back(fields_.system(k));
  }

  int depth() const noexcept { return fields_.depth(); }
  const FlowSystem& system() const noexcept { return fields_.system(); }
  const ProjectedFields& fields() const noexcept { return fields_; }
  const DeconstructionOptions& options() const noexcept { return opt_; }
  bool adapted() const noexcept { return opt_.frames == FramePolicy::adapted; }
  double horizon() const noexcept { return adapted() ? opt_.horizon : 0.0; }
  const std::vector<CircleEigenfunction>& eigenfunctions() const noexcept { return fields_.eigenfunctions(); }
  const CircleEigenfunction& z(int j) const { return fields_.eigenfunctions().at(static_cast<std::size_t>(j - 1)); }
  double omega(int j) const { return z(j).omega; }
  double period(int j) const { return kTwoPi / omega(j); }

  // V_k at x.
  State field(int k, const State& x) const {
    if (!adapted() || k == 0) return fields_.field(k, x);
    const State w = system().flow(x, -opt_.horizon);
    return push_forward(system(), w, fields_.field(k, w), opt_.horizon, opt_.fd_step);
  }

  State flow(int k, const State& x, double t) const {
    if (k == 0 || !adapted()) return pointwise_.at(static_cast<std::size_t>(k)).flow(x, t);
    return from_reference(reference_flow(k, to_reference(x), t));
  }

  // Coordinates in which the adapted stage flows are the pointwise ones.
  State to_reference(const State& x) const { return adapted() ? system().flow(x, -opt_.horizon) : x; }
  State from_reference(const State& w) const { return adapted() ? system().flow(w, opt_.horizon) : w; }
  State reference_flow(int k, const State& w, double t) const { return pointwise_.at(static_cast<std::size_t>(k)).flow(w, t); }
  double reference_offset(int j) const { return adapted() ? -omega(j) * opt_.horizon : 0.0; }

  // Phi_0^{t_1} o Phi_1^{t_2} o ... o Phi_{k-1}^{t_k} x with k = times.size(); the rightmost flow acts first.
  State chain(const State& x, std::span<const double> times) const {
    if (times.empty()) return x;
    check_chain(times.size());
    if (!conjugated(times)) {
      State y = x;
      for (std::size_t j = times.size(); j-- > 0;) y = reference_flow(static_cast<int>(j), y, times[j]);
      return y;
    }
    State w = to_reference(x);
    for (std::size_t j = times.size(); j-- > 1;) w = reference_flow(static_cast<int>(j), w, times[j]);
    return system().flow(w, opt_.horizon + times[0]);
  }

  // Inverse of chain(., times).
  State inverse_chain(const State& x, std::span<const double> times) const {
    if (times.empty()) return x;
    check_chain(times.size());
    if (!conjugated(times)) {
      State y = x;
      for (std::size_t j = 0; j < times.size(); ++j) y = reference_flow(static_cast<int>(j), y, -times[j]);
      return y;
    }
    State w = system().flow(x, -opt_.horizon - times[0]);
    for (std::size_t j = 1; j < times.size(); ++j) w = reference_flow(static_cast<int>(j), w, -times[j]);
    return from_reference(w);
  }

  // max_{j<=k} |z_j(x) - exp(i target_j)|; target defaults to zero phases.
  double membership(int k, const State& x, std::span<const double> target = {}) const {
    double worst = 0.0;
    for (int j = 1; j <= k; ++j) worst = std::max(worst, std::abs(z(j)(x) - std::polar(1.0, target_phase(target, j))));
    return worst;
  }

  // Membership of a reference-coordinate point in the image of the leaf.
  double reference_membership(int k, const State& w, std::span<const double> target = {}) const {
    double worst = 0.0;
    for (int j = 1; j <= k; ++j)
      worst = std::max(worst, std::abs(z(j)(w) - std::polar(1.0, target_phase(target, j) + reference_offset(j))));
    return worst;
  }

  // Re-zeroes phases j = 1..k in turn by short moves along Phi_{j-1}, which leaves phases < j alone.
  State refine(int k, const State& x, std::span<const double> target = {}, double tol = -1.0) const {
    if (tol < 0.0) tol = opt_.leaf_tolerance;
    if (membership(k, x, target) <= 0.5 * tol) return x;
    State y = correct_phase(1, x, target_phase(target, 1), tol);
    if (k == 1 || membership(k, y, target) <= 0.5 * tol) return y;
    State w = to_reference(y);
    w = reference_refine(k, w, target, tol, 2);
    return from_reference(w);
  }

  // As refine, on a reference-coordinate point.
  State reference_refine(int k, State w, std::span<const double> target, double tol, int first = 1) const {
    for (int j = first; j <= k; ++j) w = correct_phase(j, w, target_phase(target, j) + reference_offset(j), tol);
    return w;
  }

  // Moves along Phi_{j-1} (reference coordinates) until arg z_j = phase; Newton with the known rate omega_j.
  State correct_phase(int j, State w, double phase, double tol) const {
    for (int it = 0; it < 6; ++it) {
      const double delta = angle_difference(phase, z(j).phase(w));
      if (std::abs(delta) <= 0.25 * tol) break;
      w = reference_flow(j - 1, w, delta / omega(j));
    }
    return w;
  }

  // Smallest positive time after which Phi_{j-1} carries phase from -> to.
  double forward_time(int j, double from, double to) const {
    const double w = omega(j);
    return (w > 0.0 ? wrap_angle(to - from) : wrap_angle(from - to)) / std::abs(w);
  }

 private:
  static double target_phase(std::span<const double> target, int j) {
    return target.empty() ? 0.0 : target[static_cast<std::size_t>(j - 1)];
  }
  void check_chain(std::size_t k) const {
    if (k > static_cast<std::size_t>(depth())) throw InvalidArgument("chain longer than the number of eigenfunctions");
  }
  bool conjugated(std::span<const double> times) const {
    if (!adapted()) return false;
    for (std::size_t j = 1; j < times.size(); ++j)
      if (times[j] != 0.0) return true;
    return false;
  }

  ProjectedFields fields_;
  DeconstructionOptions opt_;
  std::vector<FlowSystem> pointwise_;
};

// Level set {z_1 = e^{i c_1}, ..., z_k = e^{i c_k}}; empty target means all phases zero.
struct LeafSpec {
  int level = 1;
  std::vector<double> target_phases;
  double tolerance = 1e-8;
};

struct LeafSampleMeasure {
  LeafSpec leaf;
  std::vector<State> samples;
};

struct LeafSampling {
  std::size_t n_samples = 1000;
  double burn_in = 50.0;
  // Leaf crossings skipped between stored samples, plus one.
  std::size_t gap = 1;
};

namespace detail {

inline std::vector<double> padded_target(const LaminarFlows& lf, const LeafSpec& leaf) {
  std::vector<double> t = leaf.target_phases;
  t.resize(static_cast<std::size_t>(lf.depth()), 0.0);
  return t;
}

// Carries a point of the level-1 leaf forward to the level-k leaf along Phi_1 .. Phi_{k-1}.
inline State land_from_first_level(const LaminarFlows& lf, const State& x, int k, std::span<const double> target,
                                   double tol) {
  if (k <= 1) return x;
  State w = lf.to_reference(x);
  for (int j = 2; j <= k; ++j) {
    const double phase = target[static_cast<std::size_t>(j - 1)] + lf.reference_offset(j);
    w = lf.reference_flow(j - 1, w, lf.forward_time(j, lf.z(j).phase(w), phase));
    w = lf.correct_phase(j, w, phase, tol);
  }
  return lf.from_reference(w);
}

}  // namespace detail

// Ergodic sampling of the conditional measure on a leaf: trajectories of the full flow are scanned for crossings
// of arg z_1 through its target, each crossing is landed by Newton steps and then carried to level k.
inline LeafSampleMeasure sample_leaf(const LaminarFlows& lf, const LeafSpec& leaf, std::span<const State> starts,
                                     const LeafSampling& opt) {
  if (leaf.level < 1 || leaf.level > lf.depth()) throw InvalidArgument("leaf level out of range");
  if (starts.empty()) throw InvalidArgument("leaf sampling needs at least one starting point");
  const std::vector<double> target = detail::padded_target(lf, leaf);
  const FlowSystem& sys = lf.system();
  const double period = std::abs(lf.period(1));
  const double scan = period / 16.0;
  const std::size_t gap = std::max<std::size_t>(1, opt.gap);
  const double sign = lf.omega(1) > 0.0 ? 1.0 : -1.0;

  LeafSampleMeasure out;
  out.leaf = leaf;
  out.samples.reserve(opt.n_samples);
  const std::size_t per = (opt.n_samples + starts.size() - 1) / starts.size();
  for (const State& start : starts) {
    const std::size_t want = std::min(per, opt.n_samples - out.samples.size());
    if (want == 0) break;
    State x = sys.flow(start, opt.burn_in);
    const double budget = (static_cast<double>(want * gap) + 2.0) * period * 2.0;
    double elapsed = 0.0;
    std::size_t crossings = 0;
    std::size_t got = 0;
    double before = angle_difference(lf.z(1).phase(x), target[0]) * sign;
    while (got < want) {
      if (elapsed > budget) throw InsufficientRecurrence(out.samples.size(), opt.n_samples);
      const State next = sys.flow(x, scan);
      elapsed += scan;
      const double after = angle_difference(lf.z(1).phase(next), target[0]) * sign;
      if (before < 0.0 && after >= 0.0 && after - before < std::numbers::pi) {
        if (++crossings % gap == 0) {
          State y = sys.flow(x, -before / std::abs(lf.omega(1)));
          y = lf.correct_phase(1, y, target[0], leaf.tolerance);
          y = detail::land_from_first_level(lf, y, leaf.level, target, leaf.tolerance);
          y = lf.refine(leaf.level, y, target, leaf.tolerance);
          out.samples.push_back(y);
          ++got;
        }
      }
      x = next;
      before = after;
    }
  }
  return out;
}

// R_k = Phi_{k-1}^{2 pi / omega_k}, which maps the level-k leaf to itself.
class ReturnMap {
 public:
  ReturnMap(LaminarFlows lf, int stage, double tolerance = -1.0, std::vector<double> target = {})
      : lf_(std::move(lf)), k_(stage), tol_(tolerance < 0.0 ? lf_.options().leaf_tolerance : tolerance),
        target_(std::move(target)) {
    if (k_ < 1 || k_ > lf_.depth()) throw InvalidArgument("return map stage out of range");
    target_.resize(static_cast<std::size_t>(lf_.depth()), 0.0);
  }

  int stage() const noexcept { return k_; }
  double period() const { return lf_.period(k_); }
  double tolerance() const noexcept { return tol_; }
  const LaminarFlows& flows() const noexcept { return lf_; }
  std::span<const double> target() const { return target_; }

  State operator()(const State& y) const { return orbit(y, 1).back(); }

  // Distance of the image from the leaf before any re-projection.
  double invariance_residual(const State& y) const {
    const bool conj = lf_.adapted() && k_ >= 2;
    const std::span<const double> t(target_.data(), static_cast<std::size_t>(k_));
    const State w = lf_.reference_flow(k_ - 1, conj ? lf_.to_reference(y) : y, period());
    return conj ? lf_.reference_membership(k_, w, t) : lf_.membership(k_, w, t);
  }

  // y, R y, ..., R^n y. The conjugation of adapted frames cancels between iterates.
  std::vector<State> orbit(const State& y, std::size_t n) const {
    std::vector<State> out;
    out.reserve(n + 1);
    out.push_back(y);
    const bool conj = lf_.adapted() && k_ >= 2;
    State w = conj ? lf_.to_reference(y) : y;
    for (std::size_t i = 0; i < n; ++i) {
      w = step(w, conj);
      out.push_back(conj ? lf_.from_reference(w) : w);
    }
    return out;
  }

 private:
  State step(const State& w0, bool conj) const {
    State w = lf_.reference_flow(k_ - 1, w0, period());
    const std::span<const double> t(target_.data(), static_cast<std::size_t>(k_));
    auto drift = [&](const State& p) { return conj ? lf_.reference_membership(k_, p, t) : lf_.membership(k_, p, t); };
    if (drift(w) > 0.5 * tol_) {
      w = conj ? lf_.reference_refine(k_, w, t, tol_) : lf_.refine(k_, w, t, tol_);
      const double left = drift(w);
      if (left > 10.0 * tol_) throw LeafEscape(left);
    }
    return w;
  }

  LaminarFlows lf_;
  int k_;
  double tol_;
  std::vector<double> target_;
};

// Suspension of a base map with unit height: Gamma^t(y, s) = (R^N y, s + t - N), N = floor(s + t).
template <class Point, class BaseMap>
class SuspensionFlow {
 public:
  explicit SuspensionFlow(BaseMap base) : base_(std::move(base)) {}

  std::pair<Point, double> operator()(Point y, double s, double t) const {
    const double h = s + t;
    const double n = std::floor(h);
    if (n < 0.0) throw InvalidArgument("suspension of a base map runs forward in time only");
    for (double i = 0.0; i < n; i += 1.0) y = base_(y);
    return {std::move(y), h - n};
  }

  const BaseMap& base() const noexcept { return base_; }

 private:
  BaseMap base_;
};

// Psi(y, s) = Phi^{s 2 pi / omega_1} y for y on the level-1 leaf.
inline State suspension_psi(const LaminarFlows& lf, const State& y, double s) {
  return lf.system().flow(y, s * lf.period(1));
}

// Distance between Psi(Gamma^t(y, s)) and Phi^{2 pi t / omega} Psi(y, s).
inline double suspension_conjugacy_check(const ReturnMap& R, const State& y, double s, double t) {
  const LaminarFlows& lf = R.flows();
  auto base = [&R](const State& p) { return R(p); };
  const SuspensionFlow<State, decltype(base)> gamma(base);
  const auto [yt, st] = gamma(y, s, t);
  const State lhs = suspension_psi(lf, yt, st);
  const State rhs = lf.system().flow(suspension_psi(lf, y, s), t * lf.period(1));
  return lf.system().chart().distance(lhs, rhs);
}

// Restriction of an ambient eigenfunction to the base leaf, with its return-map eigenvalue.
struct BaseEigenfunction {
  Observable eval;
  double omega_prime = 0.0;
  double omega_base = 1.0;
  std::string label;

  cplx eigenvalue() const { return std::polar(1.0, kTwoPi * omega_prime / omega_base); }
  cplx operator()(const State& y) const { return eval(y); }
};

inline BaseEigenfunction eigenfunction_descend(const CircleEigenfunction& zeta, const LaminarFlows& lf) {
  return BaseEigenfunction{zeta.eval, zeta.omega, lf.omega(1), zeta.label + "|leaf"};
}

inline BaseEigenfunction constant_base_eigenfunction(double omega_prime, const LaminarFlows& lf) {
  return BaseEigenfunction{[](const State&) { return cplx(1.0); }, omega_prime, lf.omega(1), "one"};
}

// max_i |f(R y_i) - lambda f(y_i)|.
inline double base_eigen_residual(const BaseEigenfunction& f, const ReturnMap& R, std::span<const State> leaf) {
  double worst = 0.0;
  for (const State& y : leaf) worst = std::max(worst, std::abs(f(R(y)) - f.eigenvalue() * f(y)));
  return worst;
}

// Stage-1 tower coordinates: s = arg z_1 / 2 pi and y = Phi^{-s 2 pi / omega_1} x.
inline std::pair<State, double> suspension_coordinates(const LaminarFlows& lf, const State& x, double tol = 1e-4) {
  const double s = wrap_unit(lf.z(1).phase(x) / kTwoPi);
  const State y = lf.system().flow(x, -s * lf.period(1));
  const double m = lf.membership(1, y);
  if (m > tol) throw TowerCoordinatesError("point does not reach the base leaf (membership " + std::to_string(m) + ")");
  return {y, s};
}

// zeta(Psi(y, s)) = exp(i 2 pi omega' s / omega) zeta~(y).
inline CircleEigenfunction eigenfunction_ascend(const BaseEigenfunction& base, const LaminarFlows& lf,
                                                const ReturnMap* check = nullptr, std::span<const State> leaf = {}) {
  if (check != nullptr && !leaf.empty()) {
    const double r = base_eigen_residual(base, *check, leaf);
    if (r > 1e-4) throw InvalidArgument("base observable is not a return-map eigenfunction (residual " + std::to_string(r) + ")");
  }
  CircleEigenfunction out;
  out.omega = base.omega_prime;
  out.label = base.label + "^";
  out.eval = [base, lf](const State& x) {
    const auto [y, s] = suspension_coordinates(lf, x);
    return std::polar(1.0, kTwoPi * base.omega_prime * s / base.omega_base) * base(y);
  };
  return out;
}

struct PushforwardResult {
  cplx mean_pushed;
  cplx mean_target;
  double se_pushed = 0.0;
  double se_target = 0.0;
  double z_score = 0.0;
};

// Mean and standard error of f over an ordered sample, the error from batch means to absorb serial correlation.
inline std::pair<cplx, double> mean_and_error(std::span<const cplx> v, std::size_t batches = 20) {
  const std::size_t n = v.size();
  if (n == 0) return {0.0, 0.0};
  const cplx mean = std::accumulate(v.begin(), v.end(), cplx(0.0)) / static_cast<double>(n);
  batches = std::min(batches, n);
  if (batches < 2) return {mean, 0.0};
  const std::size_t per = n / batches;
  double acc = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    cplx bm = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) bm += v[i];
    acc += std::norm(bm / static_cast<double>(per) - mean);
  }
  return {mean, std::sqrt(acc / static_cast<double>(batches - 1) / static_cast<double>(batches))};
}

// Compares f over Phi^t(source) with f over independent samples of the target leaf.
// Standard errors below floor are raised to it, so point-mass leaves compare at the integrator's precision.
inline PushforwardResult measure_pushforward_check(const FlowSystem& sys, std::span<const State> source,
                                                   std::span<const State> target, const Observable& f, double t,
                                                   double floor = 1e-6, std::size_t batches = 20) {
  std::vector<cplx> pushed;
  pushed.reserve(source.size());
  for (const State& y : source) pushed.push_back(f(sys.flow(y, t)));
  std::vector<cplx> direct;
  direct.reserve(target.size());
  for (const State& y : target) direct.push_back(f(y));
  PushforwardResult r;
  std::tie(r.mean_pushed, r.se_pushed) = mean_and_error(pushed, batches);
  std::tie(r.mean_target, r.se_target) = mean_and_error(direct, batches);
  const double diff = std::abs(r.mean_pushed - r.mean_target);
  const double pooled = std::max(std::hypot(r.se_pushed, r.se_target), floor);
  r.z_score = diff == 0.0 ? 0.0 : diff / pooled;
  return r;
}

}  // namespace koopdecomp

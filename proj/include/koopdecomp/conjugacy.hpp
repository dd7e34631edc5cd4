#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "koopdecomp/deconstruction.hpp"
#include "koopdecomp/errors.hpp"
#include "koopdecomp/state.hpp"

namespace koopdecomp {

// A point y of the level-k leaf and triangular angles theta_1..theta_k in [0,1).
struct TowerCoordinates {
  State y;
  std::vector<double> thetas;
};

// Cumulative phases phi_i = theta_1 + ... + theta_i (unreduced).
inline std::vector<double> cumulative_angles(std::span<const double> thetas) {
  std::vector<double> phi(thetas.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < thetas.size(); ++i) phi[i] = acc += thetas[i];
  return phi;
}

inline std::vector<double> triangular_angles(std::span<const double> phi) {
  std::vector<double> theta(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) theta[i] = wrap_unit(i == 0 ? phi[0] : phi[i] - phi[i - 1]);
  return theta;
}

// Distance on R/Z.
inline double unit_circle_distance(double a, double b) {
  const double d = wrap_unit(a - b);
  return std::min(d, 1.0 - d);
}

// Psi: (y, theta) -> Phi_0^{tau_1} o ... o Phi_{k-1}^{tau_k} y and its inverse Xi = (Xi_L, Xi_T).
// Stage times are chosen so that arg z_i(Psi) = 2 pi phi_i exactly.
class TowerMap {
 public:
  explicit TowerMap(LaminarFlows lf, double inversion_tolerance = 1e-4)
      : lf_(std::move(lf)), tol_(inversion_tolerance) {}

  int depth() const noexcept { return lf_.depth(); }
  const LaminarFlows& flows() const noexcept { return lf_; }
  double inversion_tolerance() const noexcept { return tol_; }

  std::vector<double> stage_times(std::span<const double> thetas) const {
    const std::vector<double> phi = cumulative_angles(thetas);
    std::vector<double> tau(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i) {
      const int j = static_cast<int>(i) + 1;
      tau[i] = kTwoPi * (phi[i] / lf_.omega(j) - (i == 0 ? 0.0 : phi[i - 1] / lf_.omega(j - 1)));
    }
    return tau;
  }

  State psi(const TowerCoordinates& tc) const {
    const int k = static_cast<int>(tc.thetas.size());
    if (k < 1 || k > depth()) throw InvalidArgument("tower angle count out of range");
    const double m = lf_.membership(k, tc.y);
    if (m > tol_) throw TowerCoordinatesError("base point is off the level-" + std::to_string(k) + " leaf (membership " + std::to_string(m) + ")");
    return lf_.chain(tc.y, stage_times(tc.thetas));
  }

  // Xi_T: triangular angles read off the eigenfunction phases.
  std::vector<double> angles(const State& x) const {
    std::vector<double> phi(static_cast<std::size_t>(depth()));
    for (int j = 1; j <= depth(); ++j) phi[static_cast<std::size_t>(j - 1)] = wrap_unit(lf_.z(j).phase(x) / kTwoPi);
    return triangular_angles(phi);
  }

  TowerCoordinates xi(const State& x) const {
    TowerCoordinates tc;
    tc.thetas = angles(x);
    tc.y = lf_.inverse_chain(x, stage_times(tc.thetas));
    const double m = lf_.membership(depth(), tc.y);
    if (m > tol_) throw InversionFailure(m);
    return tc;
  }

 private:
  LaminarFlows lf_;
  double tol_;
};

// Largest deviation, on R/Z, of extracted angles from the affine law phi_j -> phi_j + omega_j t / 2 pi.
inline double angle_block_deviation(const TowerMap& tm, std::span<const double> thetas, std::span<const double> evolved,
                                    double t) {
  std::vector<double> phi = cumulative_angles(thetas);
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] += tm.flows().omega(static_cast<int>(i) + 1) * t / kTwoPi;
  const std::vector<double> predicted = triangular_angles(phi);
  double worst = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) worst = std::max(worst, unit_circle_distance(predicted[i], evolved[i]));
  return worst;
}

// Xi(Phi^t(Psi(tower))), asserting the angle block moved affinely.
inline TowerCoordinates skew_form_evolve(const TowerMap& tm, const TowerCoordinates& tc, double t, double tol = 1e-5) {
  const State x = tm.flows().system().flow(tm.psi(tc), t);
  TowerCoordinates out = tm.xi(x);
  const double dev = angle_block_deviation(tm, tc.thetas, out.thetas, t);
  if (dev > tol) throw ConjugacyViolation(dev);
  return out;
}

// Distance between two tower points: angles on the circle (scaled to radians) and leaf points in the chart.
inline double tower_distance(const TowerMap& tm, const TowerCoordinates& a, const TowerCoordinates& b) {
  double worst = tm.flows().system().chart().distance(a.y, b.y);
  for (std::size_t i = 0; i < a.thetas.size(); ++i)
    worst = std::max(worst, kTwoPi * unit_circle_distance(a.thetas[i], b.thetas[i]));
  return worst;
}

inline double flow_group_law_check(const TowerMap& tm, const TowerCoordinates& tc, double s, double t) {
  const TowerCoordinates once = skew_form_evolve(tm, tc, s + t);
  const TowerCoordinates twice = skew_form_evolve(tm, skew_form_evolve(tm, tc, s), t);
  return tower_distance(tm, once, twice);
}

// Conditional means of an observable over a B^d grid of angle cells: the estimated projection onto
// functions of the angles alone.
class SplittingProjector {
 public:
  SplittingProjector(int dims, int bins) : dims_(dims), bins_(bins) {
    if (dims < 1 || bins < 1) throw InvalidArgument("projector needs positive dimension and bin count");
    const double cells = std::pow(static_cast<double>(bins), dims);
    if (cells > 1e7) throw InvalidArgument("too many angle bins");
    means_.assign(static_cast<std::size_t>(cells), 0.0);
    squares_.assign(means_.size(), 0.0);
    counts_.assign(means_.size(), 0);
  }

  int dims() const noexcept { return dims_; }
  int bins() const noexcept { return bins_; }
  std::size_t cells() const noexcept { return means_.size(); }
  const std::vector<cplx>& means() const noexcept { return means_; }
  const std::vector<std::size_t>& counts() const noexcept { return counts_; }

  std::size_t cell(std::span<const double> thetas) const {
    std::size_t idx = 0;
    for (int i = dims_ - 1; i >= 0; --i) {
      auto b = static_cast<std::size_t>(wrap_unit(thetas[static_cast<std::size_t>(i)]) * bins_);
      b = std::min(b, static_cast<std::size_t>(bins_ - 1));
      idx = idx * static_cast<std::size_t>(bins_) + b;
    }
    return idx;
  }

  std::vector<double> center(std::size_t idx) const {
    std::vector<double> c(static_cast<std::size_t>(dims_));
    for (int i = 0; i < dims_; ++i) {
      c[static_cast<std::size_t>(i)] = (static_cast<double>(idx % static_cast<std::size_t>(bins_)) + 0.5) / bins_;
      idx /= static_cast<std::size_t>(bins_);
    }
    return c;
  }

  cplx operator()(std::span<const double> thetas) const { return means_[cell(thetas)]; }

  // Sample variance of the observable within a cell, after finish().
  double variance(std::size_t c) const {
    if (counts_[c] < 2) return 0.0;
    const auto n = static_cast<double>(counts_[c]);
    return std::max(0.0, squares_[c] / n - std::norm(means_[c])) * n / (n - 1.0);
  }

  void accumulate(std::span<const double> thetas, cplx value) {
    const std::size_t c = cell(thetas);
    means_[c] += value;
    squares_[c] += std::norm(value);
    ++counts_[c];
  }

  void finish(std::size_t min_count) {
    std::vector<std::size_t> starved;
    for (std::size_t c = 0; c < means_.size(); ++c) {
      if (counts_[c] < min_count) starved.push_back(c);
      if (counts_[c] > 0) means_[c] /= static_cast<double>(counts_[c]);
    }
    if (!starved.empty()) throw UndersampledBins(std::move(starved));
  }

 private:
  int dims_;
  int bins_;
  std::vector<cplx> means_;
  std::vector<double> squares_;
  std::vector<std::size_t> counts_;
};

inline SplittingProjector project_discrete(std::span<const cplx> values, std::span<const std::vector<double>> angles,
                                           int bins = 32, std::size_t min_count = 30) {
  if (values.size() != angles.size() || values.empty()) throw InvalidArgument("values and angles must pair up");
  SplittingProjector p(static_cast<int>(angles.front().size()), bins);
  for (std::size_t i = 0; i < values.size(); ++i) p.accumulate(angles[i], values[i]);
  p.finish(min_count);
  return p;
}

// Count-weighted relative L2 distance between the cell means and a reference function of the triangular
// angles evaluated at the cell centers.
template <class Reference>
double projection_error(const SplittingProjector& p, const Reference& reference) {
  double num = 0.0, den = 0.0;
  for (std::size_t c = 0; c < p.cells(); ++c) {
    const auto w = static_cast<double>(p.counts()[c]);
    const cplx r = reference(p.center(c));
    num += w * std::norm(p.means()[c] - r);
    den += w * std::norm(r);
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

struct SplittingReport {
  std::string observable;
  double norm_total = 0.0;
  double norm_discrete = 0.0;
  double norm_continuous = 0.0;
  cplx inner;
  double inner_se = 0.0;
  double orthogonality_z = 0.0;
};

// Norms of f, its projection and the remainder on held-out samples, and the cross-fitted inner product
// <P f, f - P' f> where P and P' come from disjoint samples, which removes the bias of reusing one estimate.
// The standard error combines batch means over the held-out series with the cell noise of P'.
inline SplittingReport splitting_report(const std::string& label, const SplittingProjector& discrete,
                                        const SplittingProjector& check, std::span<const cplx> values,
                                        std::span<const std::vector<double>> angles, std::size_t batches = 20) {
  if (values.size() != angles.size() || values.empty()) throw InvalidArgument("values and angles must pair up");
  if (discrete.dims() != check.dims() || discrete.bins() != check.bins())
    throw InvalidArgument("projectors must share one cell layout");
  const auto n = static_cast<double>(values.size());
  SplittingReport r;
  r.observable = label;
  double tot = 0.0, disc = 0.0, cont = 0.0;
  std::vector<cplx> terms(values.size());
  std::vector<double> weight(check.cells(), 0.0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const cplx pf = discrete(angles[i]);
    tot += std::norm(values[i]);
    disc += std::norm(pf);
    cont += std::norm(values[i] - pf);
    terms[i] = pf * std::conj(values[i] - check(angles[i]));
    weight[check.cell(angles[i])] += 1.0 / n;
  }
  r.norm_total = std::sqrt(tot / n);
  r.norm_discrete = std::sqrt(disc / n);
  r.norm_continuous = std::sqrt(cont / n);
  double se = 0.0;
  std::tie(r.inner, se) = mean_and_error(terms, batches);
  double cell_var = 0.0;
  for (std::size_t c = 0; c < check.cells(); ++c)
    if (check.counts()[c] > 0)
      cell_var += weight[c] * weight[c] * std::norm(discrete.means()[c]) * check.variance(c) /
                  static_cast<double>(check.counts()[c]);
  r.inner_se = std::sqrt(se * se + cell_var);
  r.orthogonality_z = r.inner_se > 0.0 ? std::abs(r.inner) / r.inner_se : 0.0;
  return r;
}

}  // namespace koopdecomp

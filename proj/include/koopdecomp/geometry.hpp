#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "koopdecomp/eigenfunctions.hpp"
#include "koopdecomp/errors.hpp"
#include "koopdecomp/flow.hpp"
#include "koopdecomp/state.hpp"

namespace koopdecomp {

inline constexpr double kDefaultFdStep = 1e-5;

struct MetricSpec {
  std::function<Matrix(const State&)> gram;

  static MetricSpec euclidean(int n) {
    return {[n](const State&) { return Matrix(Matrix::Identity(n, n)); }};
  }
  double inner(const State& x, const State& a, const State& b) const { return a.dot(gram(x) * b); }
};

enum class Normalization { none, conformal };
enum class ProjectionRule { frequency, inner_product };

namespace detail {

inline std::vector<double> to_vector(const State& x) { return {x.data(), x.data() + x.size()}; }

inline void check_fd_step(double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw InvalidArgument("finite-difference step must lie in [1e-7, 1e-3]");
}

inline Eigen::LLT<Matrix> factor_gram(const Matrix& g) {
  Eigen::LLT<Matrix> llt(g);
  if (llt.info() != Eigen::Success) throw MetricDegenerate("gram matrix is not positive definite");
  return llt;
}

}  // namespace detail

// d(arg z) as a covector, by central differences of the phase ratio.
inline State circle_differential(const CircleEigenfunction& z, const State& x, double h = kDefaultFdStep) {
  detail::check_fd_step(h);
  const int n = static_cast<int>(x.size());
  State dz(n);
  State probe = x;
  for (int i = 0; i < n; ++i) {
    probe[i] = x[i] + h;
    const cplx up = z(probe);
    probe[i] = x[i] - h;
    const cplx down = z(probe);
    probe[i] = x[i];
    const double jump = std::arg(up / down);
    if (std::abs(jump) > std::numbers::pi / 2) throw StencilTooCoarse("phase of " + z.label + " jumps across the stencil");
    dz[i] = jump / (2.0 * h);
  }
  return dz;
}

// Rows are d(arg z_j).
inline Matrix circle_differentials(const std::vector<CircleEigenfunction>& zs, const State& x, double h = kDefaultFdStep) {
  Matrix D(static_cast<Eigen::Index>(zs.size()), x.size());
  for (std::size_t j = 0; j < zs.size(); ++j) D.row(static_cast<Eigen::Index>(j)) = circle_differential(zs[j], x, h).transpose();
  return D;
}

inline State circle_gradient(const CircleEigenfunction& z, const MetricSpec& metric, const State& x,
                             double h = kDefaultFdStep, Normalization policy = Normalization::none) {
  const State dz = circle_differential(z, x, h);
  const State grad = detail::factor_gram(metric.gram(x)).solve(dz);
  if (policy == Normalization::conformal) {
    // Rescaling the metric by |dz|^2 makes the gradient a unit vector.
    const double sq = dz.dot(grad);
    if (!(sq > 0.0)) throw SubmersionViolation("differential of " + z.label + " vanishes", detail::to_vector(x));
    return grad / sq;
  }
  return grad;
}

// Orthonormalizing frame at a point: covectors D (d x n), their tau-gradients E (n x d) and tau itself.
// tau = D^T D + P^T g P with P = I - E D; then tau E = D^T and the columns of E are tau-orthonormal.
struct Frame {
  Matrix D;
  Matrix E;
  Matrix tau;
};

namespace detail {

inline Matrix dual_gradients(const Matrix& D, const Matrix& g, const State& x) {
  const Eigen::LLT<Matrix> gl = factor_gram(g);
  const Matrix GinvDt = gl.solve(Matrix(D.transpose()));
  const Matrix S = D * GinvDt;
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  const double top = es.eigenvalues().maxCoeff();
  const double bottom = es.eigenvalues().minCoeff();
  if (!(top > 0.0) || bottom < 1e-10 * top)
    throw SubmersionViolation("eigenfunction differentials are linearly dependent", to_vector(x));
  return Matrix(GinvDt * S.llt().solve(Matrix(Matrix::Identity(S.rows(), S.cols()))));
}

}  // namespace detail

inline Frame orthonormal_frame(const std::vector<CircleEigenfunction>& zs, const MetricSpec& base, const State& x,
                               double h = kDefaultFdStep) {
  Frame f;
  f.D = circle_differentials(zs, x, h);
  const Matrix g = base.gram(x);
  f.E = detail::dual_gradients(f.D, g, x);
  const Eigen::Index n = x.size();
  const Matrix P = Matrix::Identity(n, n) - f.E * f.D;
  f.tau = f.D.transpose() * f.D + P.transpose() * g * P;
  return f;
}

inline MetricSpec orthonormalizing_metric(std::vector<CircleEigenfunction> zs, MetricSpec base,
                                          double h = kDefaultFdStep) {
  return {[zs = std::move(zs), base = std::move(base), h](const State& x) { return orthonormal_frame(zs, base, x, h).tau; }};
}

// Smallest eigenvalue and asymmetry of the gram matrix over sample points.
inline std::pair<double, double> metric_health(const MetricSpec& metric, std::span<const State> points) {
  double smallest = std::numeric_limits<double>::infinity();
  double asym = 0.0;
  for (const State& x : points) {
    const Matrix g = metric.gram(x);
    asym = std::max(asym, (g - g.transpose()).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
    smallest = std::min(smallest, es.eigenvalues().minCoeff());
  }
  return {smallest, asym};
}

// One step of the recursion: V_prev minus its component along grad z_k.
inline State project_field(const FieldFn& prev, const CircleEigenfunction& z_k, const MetricSpec& metric, const State& x,
                           ProjectionRule rule = ProjectionRule::frequency, double h = kDefaultFdStep) {
  const State v = prev(x);
  const State grad = circle_gradient(z_k, metric, x, h);
  const double c = rule == ProjectionRule::frequency ? z_k.omega : metric.inner(x, v, grad);
  return v - c * grad;
}

inline cplx lie_derivative(const State& w, const Observable& f, const State& x, double h = kDefaultFdStep) {
  const double scale = w.norm();
  if (scale == 0.0) return 0.0;
  const double eps = h / scale;
  return (f(x + eps * w) - f(x - eps * w)) / (2.0 * eps);
}

inline cplx lie_derivative(const FieldFn& field, const Observable& f, const State& x, double h = kDefaultFdStep) {
  return lie_derivative(field(x), f, x, h);
}

// Projected fields V_0 = V, V_k = V_{k-1} - c_k grad z_k, with gradients taken in the orthonormalizing metric.
class ProjectedFields {
 public:
  ProjectedFields(FlowSystem sys, std::vector<CircleEigenfunction> zs, MetricSpec base,
                  ProjectionRule rule = ProjectionRule::frequency, double h = kDefaultFdStep)
      : sys_(std::move(sys)), zs_(std::move(zs)), base_(std::move(base)), rule_(rule), h_(h) {
    detail::check_fd_step(h_);
    if (zs_.empty()) throw InvalidArgument("at least one eigenfunction is required");
  }
  ProjectedFields(FlowSystem sys, std::vector<CircleEigenfunction> zs,
                  ProjectionRule rule = ProjectionRule::frequency, double h = kDefaultFdStep)
      : ProjectedFields(sys, std::move(zs), MetricSpec::euclidean(sys.dim()), rule, h) {}

  int depth() const noexcept { return static_cast<int>(zs_.size()); }
  const FlowSystem& system() const noexcept { return sys_; }
  const std::vector<CircleEigenfunction>& eigenfunctions() const noexcept { return zs_; }
  const MetricSpec& base_metric() const noexcept { return base_; }
  ProjectionRule rule() const noexcept { return rule_; }
  double fd_step() const noexcept { return h_; }

  Frame frame(const State& x) const { return orthonormal_frame(zs_, base_, x, h_); }

  State field(int k, const State& x) const {
    check_level(k);
    State v = sys_.eval(x);
    if (k == 0) return v;
    const Matrix D = circle_differentials(zs_, x, h_);
    const Matrix E = detail::dual_gradients(D, base_.gram(x), x);
    for (int j = 0; j < k; ++j) {
      const double c = rule_ == ProjectionRule::frequency ? zs_[static_cast<std::size_t>(j)].omega : D.row(j).dot(v);
      v -= c * E.col(j);
    }
    return v;
  }

  // <V_k, grad z_j>_tau, which equals d(arg z_j)(V_k); j counts from 1.
  double tangency(int k, int j, const State& x) const {
    return circle_differential(zs_.at(static_cast<std::size_t>(j - 1)), x, h_).dot(field(k, x));
  }

  FlowSystem system(int k) const {
    check_level(k);
    if (k == 0) return sys_;
    auto self = *this;
    return FlowSystem(VectorFieldSpec{sys_.chart(), [self, k](const State& x) { return self.field(k, x); }}, sys_.step());
  }

 private:
  void check_level(int k) const {
    if (k < 0 || k > depth()) throw InvalidArgument("stage index out of range");
  }

  FlowSystem sys_;
  std::vector<CircleEigenfunction> zs_;
  MetricSpec base_;
  ProjectionRule rule_;
  double h_;
};

}  // namespace koopdecomp

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "support.hpp"

using namespace koopdecomp;
using testsupport::kSqrt2;

namespace {

LaminarFlows flows_for(const PrototypeQPD& p, FramePolicy frames, double step = 1e-2) {
  DeconstructionOptions opt;
  opt.frames = frames;
  return LaminarFlows(make_prototype(p, step), analytic_eigenfunctions(p), opt);
}

State base_point(const LaminarFlows& lf, double y) {
  State x = State::Zero(lf.system().dim());
  x[x.size() - 1] = y;
  return lf.refine(lf.depth(), x);
}

double total(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(Angles, CumulativeAndTriangularInvert) {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> theta{u(rng), u(rng), u(rng)};
    const auto back = triangular_angles(cumulative_angles(theta));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_LT(unit_circle_distance(back[j], theta[j]), 1e-12);
  }
  EXPECT_NEAR(unit_circle_distance(0.95, 0.05), 0.1, 1e-12);
}

TEST(TowerMap, ZeroAnglesGiveBasePoint) {
  const TowerMap tm(flows_for(testsupport::linear_damped({1.0, kSqrt2}), FramePolicy::pointwise));
  const State y = base_point(tm.flows(), 0.3);
  EXPECT_LT(tm.flows().system().chart().distance(tm.psi({y, {0.0, 0.0}}), y), 1e-12);
}

TEST(TowerMap, FirstLevelIsTheSuspension) {
  const TowerMap tm(flows_for(testsupport::linear_damped({1.0}, "shear", 0.5), FramePolicy::pointwise));
  const LaminarFlows& lf = tm.flows();
  const State y = base_point(lf, -0.4);
  for (double s : {0.0, 0.3, 0.77})
    EXPECT_LT(lf.system().chart().distance(tm.psi({y, {s}}), suspension_psi(lf, y, s)), 1e-8);
}

TEST(TowerMap, OffLeafBaseRejected) {
  const TowerMap tm(flows_for(testsupport::linear_damped({1.0, kSqrt2}), FramePolicy::pointwise));
  EXPECT_THROW(tm.psi({make_state({0.5, 0.0, 0.0}), {0.1, 0.2}}), TowerCoordinatesError);
  EXPECT_THROW(tm.psi({make_state({0.0, 0.0, 0.0}), {}}), InvalidArgument);
}

TEST(TowerMap, UnwarpedAnglesAreTriangular) {
  const TowerMap tm(flows_for(testsupport::linear_damped({1.0, kSqrt2}), FramePolicy::pointwise));
  std::mt19937_64 rng(53);
  for (int i = 0; i < 20; ++i) {
    const State x = testsupport::random_point(tm.flows().system().chart(), rng);
    const std::vector<double> phi{x[0] / kTwoPi, x[1] / kTwoPi};
    const auto want = triangular_angles(phi);
    const auto got = tm.angles(x);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_LT(unit_circle_distance(got[j], want[j]), 1e-12);
  }
}

TEST(TowerMap, RoundTripOnWarpedPrototype) {
  const TowerMap tm(flows_for(testsupport::linear_damped({1.0, kSqrt2}, "twist", 0.5), FramePolicy::adapted));
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 5; ++i) {
    const TowerCoordinates tc{base_point(tm.flows(), 2.0 * u(rng) - 1.0), {u(rng), u(rng)}};
    const TowerCoordinates back = tm.xi(tm.psi(tc));
    EXPECT_LE(tower_distance(tm, tc, back), 1e-4);
    // The other order: Psi(Xi(x)) = x.
    const State x = testsupport::random_point(tm.flows().system().chart(), rng, 1.0);
    EXPECT_LE(tm.flows().system().chart().distance(tm.psi(tm.xi(x)), x), 1e-4);
  }
}

TEST(SkewForm, SlowSecondFrequency) {
  const TowerMap tm(flows_for(testsupport::linear_damped({1.0, 0.5 * kSqrt2}), FramePolicy::pointwise));
  const TowerCoordinates tc{base_point(tm.flows(), 0.2), {0.25, 0.6}};
  for (double t : {1.0, kTwoPi, 2.0 * kTwoPi}) EXPECT_NO_THROW(skew_form_evolve(tm, tc, t)) << t;
}

TEST(SkewForm, FiberFollowsDecayLaw) {
  // The graph deviation decays as exp(-t) under every stage flow, so
  // dev(Xi_L(Phi^t Psi(y, theta))) = exp(sum tau' - t - sum tau) dev(y).
  const PrototypeQPD p = testsupport::linear_damped({1.0, kSqrt2});
  const TowerMap tm(flows_for(p, FramePolicy::adapted));
  std::mt19937_64 rng(57);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    const TowerCoordinates tc{base_point(tm.flows(), 2.0 * u(rng) - 1.0), {u(rng), u(rng)}};
    const double t = 3.0 * u(rng);
    const TowerCoordinates out = skew_form_evolve(tm, tc, t);
    const double want = std::exp(total(tm.stage_times(out.thetas)) - t - total(tm.stage_times(tc.thetas))) *
                        testsupport::graph_deviation(p, tc.y);
    EXPECT_NEAR(testsupport::graph_deviation(p, out.y), want, 1e-4);
  }
}

TEST(SkewForm, GroupLaw) {
  const TowerMap tm(flows_for(testsupport::linear_damped({1.0, kSqrt2}, "shear", 0.5), FramePolicy::adapted));
  const TowerCoordinates tc{base_point(tm.flows(), 0.4), {0.3, 0.8}};
  EXPECT_LE(flow_group_law_check(tm, tc, 0.0, 1.3), 1e-4);
  EXPECT_LE(flow_group_law_check(tm, tc, 0.7, 2.1), 1e-4);
  EXPECT_LE(flow_group_law_check(tm, tc, 1.5, -1.5), 1e-4);
}

TEST(SkewForm, ViolationIsReported) {
  const TowerMap tm(flows_for(testsupport::linear_damped({1.0, kSqrt2}), FramePolicy::pointwise));
  const TowerCoordinates tc{base_point(tm.flows(), 0.0), {0.1, 0.1}};
  EXPECT_THROW(skew_form_evolve(tm, tc, 1.0, -1.0), ConjugacyViolation);
}

class Projector : public ::testing::Test {
 protected:
  std::mt19937_64 rng{61};
  std::uniform_real_distribution<double> u{0.0, 1.0};

  std::vector<std::vector<double>> angles(std::size_t n) {
    std::vector<std::vector<double>> a(n);
    for (auto& v : a) v = {u(rng)};
    return a;
  }
};

TEST_F(Projector, EigenfunctionOfTheAngle) {
  const auto a = angles(1000000);
  std::vector<cplx> z(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) z[i] = std::polar(1.0, kTwoPi * a[i][0]);
  const SplittingProjector p = project_discrete(z, a, 32);
  const double err = projection_error(p, [](const std::vector<double>& c) { return std::polar(1.0, kTwoPi * c[0]); });
  EXPECT_LE(err, 0.05);
}

TEST_F(Projector, ConstantIsExact) {
  const auto a = angles(5000);
  const std::vector<cplx> one(a.size(), 2.5);
  const SplittingProjector p = project_discrete(one, a, 8);
  for (const cplx m : p.means()) EXPECT_NEAR(std::abs(m - 2.5), 0.0, 1e-12);
  EXPECT_EQ(p.variance(0), 0.0);
}

TEST_F(Projector, StarvedBinsReported) {
  const auto a = angles(100);
  const std::vector<cplx> v(a.size(), 1.0);
  try {
    project_discrete(v, a, 32);
    FAIL() << "expected starved bins";
  } catch (const UndersampledBins& e) {
    EXPECT_FALSE(e.bins().empty());
  }
  EXPECT_THROW(project_discrete(v, std::vector<std::vector<double>>(3, {0.1}), 4), InvalidArgument);
}

TEST_F(Projector, Idempotent) {
  const auto a = angles(20000);
  std::vector<cplx> v(a.size());
  std::normal_distribution<double> noise(0.0, 0.3);
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = std::cos(kTwoPi * a[i][0]) + noise(rng);
  const SplittingProjector p = project_discrete(v, a, 16);
  std::vector<cplx> pv(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) pv[i] = p(a[i]);
  const SplittingProjector pp = project_discrete(pv, a, 16);
  for (std::size_t c = 0; c < p.cells(); ++c) EXPECT_NEAR(std::abs(pp.means()[c] - p.means()[c]), 0.0, 1e-12);
}

TEST_F(Projector, CellLayout) {
  const SplittingProjector p(2, 4);
  EXPECT_EQ(p.cells(), 16u);
  const std::vector<double> theta{0.3, 0.8};
  const auto c = p.center(p.cell(theta));
  EXPECT_DOUBLE_EQ(c[0], 0.375);
  EXPECT_DOUBLE_EQ(c[1], 0.875);
  EXPECT_THROW(SplittingProjector(0, 4), InvalidArgument);
  EXPECT_THROW(SplittingProjector(3, 1000), InvalidArgument);
}

TEST_F(Projector, NoiseIsOrthogonalToAngles) {
  // f = g(angle) + noise; the remainder should carry the noise and be orthogonal to P f.
  std::normal_distribution<double> noise(0.0, 1.0);
  auto draw = [&](std::size_t n, std::vector<cplx>& v, std::vector<std::vector<double>>& a) {
    a = angles(n);
    v.resize(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = std::sin(kTwoPi * a[i][0]) + noise(rng);
  };
  std::vector<cplx> va, vb, vc;
  std::vector<std::vector<double>> aa, ab, ac;
  draw(100000, va, aa);
  draw(100000, vb, ab);
  draw(100000, vc, ac);
  const SplittingReport r = splitting_report("f", project_discrete(va, aa, 16), project_discrete(vb, ab, 16), vc, ac);
  EXPECT_LE(r.orthogonality_z, 3.0);
  EXPECT_NEAR(r.norm_discrete, std::sqrt(0.5), 0.02);
  EXPECT_NEAR(r.norm_continuous, 1.0, 0.02);
  EXPECT_THROW(splitting_report("f", project_discrete(va, aa, 16), project_discrete(vb, ab, 8), vc, ac), InvalidArgument);
}

TEST(ProjectorOnFlow, FiberProjectsToTheGraph) {
  // On the contracting prototype y settles onto (cos theta + sin theta) / 2.
  const PrototypeQPD p = testsupport::linear_damped({1.0});
  const TowerMap tm(flows_for(p, FramePolicy::pointwise));
  const FlowSystem& sys = tm.flows().system();
  const auto traj = sys.trajectory(sys.flow(make_state({0.0, 0.0}), 30.0), 0.37, 20000);
  std::vector<cplx> v;
  std::vector<std::vector<double>> a;
  for (const State& x : traj) {
    a.push_back(tm.angles(x));
    v.push_back(x[1] - 0.5 * (std::cos(x[0]) + std::sin(x[0])));
  }
  const SplittingProjector proj = project_discrete(v, a, 16);
  for (const cplx m : proj.means()) EXPECT_LE(std::abs(m), 0.05);
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "support.hpp"

using namespace koopdecomp;
using testsupport::kSqrt2;

namespace {

const std::vector<double> kOmega{1.0, kSqrt2};

LaminarFlows flows_for(const PrototypeQPD& p, FramePolicy frames, double step = 1e-2) {
  DeconstructionOptions opt;
  opt.frames = frames;
  return LaminarFlows(make_prototype(p, step), analytic_eigenfunctions(p), opt);
}

std::vector<State> leaf_points(const LaminarFlows& lf, int level, std::size_t n, std::size_t gap = 3) {
  const std::vector<State> starts{make_state({0.3, 1.0, 0.5}), make_state({2.0, 4.0, -0.5})};
  std::vector<State> trimmed;
  for (const State& s : starts) trimmed.push_back(s.head(lf.system().dim()));
  return sample_leaf(lf, LeafSpec{level, {}, 1e-8}, trimmed, LeafSampling{n, 20.0, gap}).samples;
}

// Fiber of the unwarped linear-damped prototype along prescribed angle paths theta_j(s) = a_j + b_j s.
double driven_fiber(double y, std::vector<double> a, std::vector<double> b, double t0, double t1) {
  return testsupport::scalar_rk4(
      [&](double s, double v) {
        double forcing = 1.0;
        for (std::size_t j = 0; j < a.size(); ++j) forcing *= std::cos(a[j] + b[j] * s);
        return -v + forcing;
      },
      y, t0, t1);
}

}  // namespace

TEST(SampleLeaf, RotationLeafIsAPoint) {
  const PrototypeQPD p{1, {1.0}, FiberModel{}, std::nullopt};
  const LaminarFlows lf = flows_for(p, FramePolicy::pointwise);
  const auto samples = leaf_points(lf, 1, 5);
  ASSERT_EQ(samples.size(), 5u);
  for (const State& y : samples) EXPECT_LE(std::abs(angle_difference(y[0], 0.0)), 1e-8);
}

TEST(SampleLeaf, MembershipAtTolerance) {
  const LaminarFlows one = flows_for(testsupport::linear_damped({1.0}), FramePolicy::pointwise);
  for (const State& y : leaf_points(one, 1, 20)) EXPECT_LE(one.membership(1, y), 1e-8);

  for (FramePolicy frames : {FramePolicy::pointwise, FramePolicy::adapted}) {
    const LaminarFlows two = flows_for(testsupport::linear_damped(kOmega, "twist", 0.5), frames);
    for (const State& y : leaf_points(two, 2, 6)) EXPECT_LE(two.membership(2, y), 1e-8);
  }
}

TEST(SampleLeaf, RejectsBadRequests) {
  const LaminarFlows lf = flows_for(testsupport::linear_damped({1.0}), FramePolicy::pointwise);
  EXPECT_THROW(sample_leaf(lf, LeafSpec{2, {}, 1e-8}, std::vector<State>{make_state({0.0, 0.0})}, {}), InvalidArgument);
  EXPECT_THROW(sample_leaf(lf, LeafSpec{1, {}, 1e-8}, std::vector<State>{}, {}), InvalidArgument);
}

TEST(SampleLeaf, TargetPhases) {
  const LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega), FramePolicy::pointwise);
  const std::vector<double> target{1.0, -2.0};
  const auto m = sample_leaf(lf, LeafSpec{2, target, 1e-8}, std::vector<State>{make_state({0.0, 0.0, 0.0})},
                             LeafSampling{4, 10.0, 1});
  for (const State& y : m.samples) EXPECT_LE(lf.membership(2, y, target), 1e-8);
}

TEST(LaminarFlow, LastStageFreezesAngles) {
  const PrototypeQPD p = testsupport::linear_damped(kOmega);
  const LaminarFlows lf = flows_for(p, FramePolicy::pointwise);
  const State x = make_state({0.7, 2.1, 0.4});
  const State y = lf.flow(2, x, 1.5);
  EXPECT_NEAR(y[0], x[0], 1e-8);
  EXPECT_NEAR(y[1], x[1], 1e-8);
  EXPECT_NEAR(y[2], driven_fiber(x[2], {x[0], x[1]}, {0.0, 0.0}, 0.0, 1.5), 1e-8);
}

TEST(LaminarFlow, ZeroTimeIsIdentity) {
  const LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega, "shear", 0.4), FramePolicy::adapted);
  const State x = make_state({0.7, 2.1, 0.4});
  for (int k = 0; k <= 2; ++k) EXPECT_LT(lf.system().chart().distance(lf.flow(k, x, 0.0), x), 1e-9);
}

TEST(LaminarFlow, PeriodKeepsFirstLeaf) {
  const LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega, "twist", 0.5), FramePolicy::pointwise);
  for (const State& y : leaf_points(lf, 1, 4)) EXPECT_LE(lf.membership(1, lf.flow(1, y, lf.period(1))), 1e-5);
}

TEST(LaminarFlow, LeavesAreInvariant) {
  for (FramePolicy frames : {FramePolicy::pointwise, FramePolicy::adapted}) {
    const LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega, "twist", 0.5), frames);
    for (int k = 1; k <= 2; ++k) {
      for (const State& y : leaf_points(lf, k, 3)) {
        for (double t : {0.5, 4.0, 10.0}) EXPECT_LE(lf.membership(k, lf.flow(k, y, t)), 1e-4) << "k=" << k << " t=" << t;
      }
    }
  }
}

TEST(LaminarFlow, StageFlowsCommuteWithTheFlow) {
  const LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega, "twist", 0.5), FramePolicy::adapted);
  const FlowSystem& sys = lf.system();
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    const State x = testsupport::random_point(sys.chart(), rng);
    const double s = u(rng), t = u(rng);
    for (int k = 1; k <= 2; ++k)
      EXPECT_LE(sys.chart().distance(sys.flow(lf.flow(k, x, t), s), lf.flow(k, sys.flow(x, s), t)), 1e-4);
  }
}

TEST(ReturnMap, LastStageMatchesScalarOde) {
  // R_2 = Phi_1 over 2 pi / omega_2: theta_1 stays at 0 while theta_2 is driven from 0.
  const PrototypeQPD p = testsupport::linear_damped(kOmega);
  const LaminarFlows lf = flows_for(p, FramePolicy::pointwise);
  const ReturnMap R(lf, 2);
  for (double y0 : {-1.0, 0.2, 1.5}) {
    const State y = R(make_state({0.0, 0.0, y0}));
    EXPECT_NEAR(y[2], driven_fiber(y0, {0.0, 0.0}, {0.0, kSqrt2}, 0.0, kTwoPi / kSqrt2), 1e-7);
    EXPECT_LE(lf.membership(2, y), 1e-8);
  }
}

TEST(ReturnMap, AdaptedLastStageMatchesScalarOde) {
  // Adapted frames: back along the full flow for the horizon, the pointwise stage, then forward again.
  const PrototypeQPD p = testsupport::linear_damped(kOmega);
  const LaminarFlows lf = flows_for(p, FramePolicy::adapted);
  const double T = lf.options().horizon;
  const double period = kTwoPi / kSqrt2;
  const ReturnMap R(lf, 2);
  for (double y0 : {-1.0, 0.8}) {
    double v = driven_fiber(y0, {0.0, 0.0}, kOmega, 0.0, -T);
    v = driven_fiber(v, {-T, -kSqrt2 * T}, {0.0, kSqrt2}, 0.0, period);
    v = driven_fiber(v, {-T, -kSqrt2 * T + kTwoPi}, kOmega, 0.0, T);
    EXPECT_NEAR(R(make_state({0.0, 0.0, y0}))[2], v, 1e-6);
  }
}

TEST(ReturnMap, EquilibriumIsFixed) {
  Params params{{"amplitude", 0.0}};
  const LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega, "none", 0.0, params), FramePolicy::pointwise);
  const State origin = make_state({0.0, 0.0, 0.0});
  EXPECT_LT(lf.system().chart().distance(ReturnMap(lf, 2)(origin), origin), 1e-10);
  // R_1 still turns the second angle.
  const State y = ReturnMap(lf, 1)(origin);
  EXPECT_NEAR(angle_difference(y[1], kTwoPi * kSqrt2), 0.0, 1e-9);
  EXPECT_NEAR(y[2], 0.0, 1e-12);
}

TEST(ReturnMap, LongOrbitsStayOnTheLeaf) {
  const LaminarFlows one = flows_for(testsupport::linear_damped({1.0}, "shear", 0.5), FramePolicy::pointwise);
  const ReturnMap R1(one, 1);
  for (const State& y : R1.orbit(leaf_points(one, 1, 1).front(), 100)) EXPECT_LE(one.membership(1, y), 1e-4);

  const LaminarFlows two = flows_for(testsupport::linear_damped(kOmega, "twist", 0.5), FramePolicy::adapted);
  const ReturnMap R2(two, 2);
  const State y0 = leaf_points(two, 2, 1).front();
  EXPECT_LE(R2.invariance_residual(y0), 10 * R2.tolerance());
  for (const State& y : R2.orbit(y0, 30)) EXPECT_LE(two.membership(2, y), 10 * R2.tolerance());
}

TEST(ReturnMap, IteratesMatchStageFlow) {
  const LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega, "twist", 0.5), FramePolicy::adapted);
  for (int k = 1; k <= 2; ++k) {
    const ReturnMap R(lf, k);
    const State y = leaf_points(lf, k, 1).front();
    const auto orbit = R.orbit(y, 20);
    for (std::size_t n : {1u, 7u, 20u})
      EXPECT_LE(lf.system().chart().distance(orbit[n], lf.flow(k - 1, y, static_cast<double>(n) * R.period())), 1e-4);
  }
}

TEST(ReturnMap, StageRange) {
  const LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega), FramePolicy::pointwise);
  EXPECT_THROW(ReturnMap(lf, 0), InvalidArgument);
  EXPECT_THROW(ReturnMap(lf, 3), InvalidArgument);
}

class Suspension : public ::testing::Test {
 protected:
  PrototypeQPD p = testsupport::linear_damped({1.0}, "shear", 0.5);
  LaminarFlows lf = flows_for(p, FramePolicy::pointwise);
  ReturnMap R{lf, 1};
  std::vector<State> leaf = leaf_points(lf, 1, 10);
  std::mt19937_64 rng{41};
};

TEST_F(Suspension, PsiAdvancesPhase) {
  const State& y = leaf.front();
  EXPECT_LT(lf.system().chart().distance(suspension_psi(lf, y, 0.0), y), 1e-12);
  for (double s : {0.1, 0.45, 0.8}) EXPECT_NEAR(angle_difference(lf.z(1).phase(suspension_psi(lf, y, s)), kTwoPi * s), 0.0, 1e-5);
  EXPECT_LT(lf.system().chart().distance(suspension_psi(lf, y, 1.0 - 1e-9), R(y)), 1e-6);
}

TEST_F(Suspension, DistinctFibersAreDisjoint) {
  const State& y = leaf[1];
  for (double s : {0.1, 0.6})
    for (double s2 : {0.3, 0.95}) {
      const double d = lf.z(1).phase(suspension_psi(lf, y, s)) - lf.z(1).phase(suspension_psi(lf, y, s2));
      EXPECT_NEAR(angle_difference(d, kTwoPi * (s - s2)), 0.0, 1e-5);
    }
}

TEST_F(Suspension, ConjugacyResidual) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  EXPECT_EQ(suspension_conjugacy_check(R, leaf[0], 0.3, 0.0), 0.0);
  for (const State& y : leaf) EXPECT_LE(suspension_conjugacy_check(R, y, u(rng), 3.0 * u(rng)), 1e-4);
  for (double n : {1.0, 2.0, 3.0}) EXPECT_LE(suspension_conjugacy_check(R, leaf[2], 0.0, n), 1e-4);
}

TEST_F(Suspension, CoordinatesInvertPsi) {
  for (const State& y : leaf) {
    const auto [back, s] = suspension_coordinates(lf, suspension_psi(lf, y, 0.37));
    EXPECT_NEAR(s, 0.37, 1e-8);
    EXPECT_LT(lf.system().chart().distance(back, y), 1e-6);
  }
}

TEST(SuspensionFlow, GroupLaw) {
  const CircleRotation rot{0.7};
  const SuspensionFlow<double, CircleRotation> gamma(rot);
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int i = 0; i < 50; ++i) {
    const double y = u(rng), s = u(rng) / 3.0, a = u(rng), b = u(rng);
    const auto [y1, s1] = gamma(y, s, a);
    const auto [y2, s2] = gamma(y1, s1, b);
    const auto [y3, s3] = gamma(y, s, a + b);
    EXPECT_NEAR(angle_difference(y2, y3), 0.0, 1e-12);
    EXPECT_NEAR(s2, s3, 1e-12);
  }
  EXPECT_THROW(gamma(0.0, 0.5, -1.0), InvalidArgument);
}

class Ladder : public ::testing::Test {
 protected:
  LaminarFlows lf = flows_for(testsupport::linear_damped(kOmega), FramePolicy::pointwise);
  ReturnMap R{lf, 1};
  std::vector<State> leaf = leaf_points(lf, 1, 100, 1);
};

TEST_F(Ladder, SecondEigenfunctionDescends) {
  const BaseEigenfunction f = eigenfunction_descend(lf.z(2), lf);
  EXPECT_LT(std::abs(f.eigenvalue() - std::polar(1.0, kTwoPi * kSqrt2)), 1e-12);
  EXPECT_LE(base_eigen_residual(f, R, leaf), 1e-4);
}

TEST_F(Ladder, TrivialDescents) {
  const CircleEigenfunction constant{[](const State&) { return cplx(1.0); }, 0.0, "one"};
  const BaseEigenfunction c = eigenfunction_descend(constant, lf);
  EXPECT_LT(std::abs(c.eigenvalue() - 1.0), 1e-15);
  const BaseEigenfunction first = eigenfunction_descend(lf.z(1), lf);
  EXPECT_LT(std::abs(first.eigenvalue() - 1.0), 1e-12);
  for (const State& y : leaf) EXPECT_LT(std::abs(first(y) - 1.0), 1e-8);
}

TEST_F(Ladder, AscentRecoversEigenfunctions) {
  std::mt19937_64 rng(47);
  std::vector<State> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(testsupport::random_point(lf.system().chart(), rng, 1.0));
  auto check_up_to_phase = [&](const CircleEigenfunction& up, const CircleEigenfunction& want) {
    const cplx phase = up(pts[0]) / want(pts[0]);
    double worst = 0.0;
    for (const State& x : pts) worst = std::max(worst, std::abs(up(x) - phase * want(x)));
    return worst;
  };
  const CircleEigenfunction z2 = eigenfunction_ascend(eigenfunction_descend(lf.z(2), lf), lf, &R, leaf);
  EXPECT_DOUBLE_EQ(z2.omega, kSqrt2);
  EXPECT_LE(check_up_to_phase(z2, lf.z(2)), 1e-3);

  const CircleEigenfunction z1 = eigenfunction_ascend(constant_base_eigenfunction(1.0, lf), lf);
  EXPECT_LE(check_up_to_phase(z1, lf.z(1)), 1e-3);

  const CircleEigenfunction one = eigenfunction_ascend(constant_base_eigenfunction(0.0, lf), lf);
  for (const State& x : pts) EXPECT_LT(std::abs(one(x) - 1.0), 1e-12);
}

TEST_F(Ladder, AscentRejectsNonEigenfunctions) {
  const BaseEigenfunction wrong{[](const State& y) { return cplx(std::cos(y[2]), std::sin(y[2])); }, kSqrt2, 1.0, "bad"};
  EXPECT_THROW(eigenfunction_ascend(wrong, lf, &R, leaf), InvalidArgument);
}

TEST(Pushforward, ConstantObservable) {
  const LaminarFlows lf = flows_for(testsupport::linear_damped({1.0}), FramePolicy::pointwise);
  const auto leaf = leaf_points(lf, 1, 50);
  const auto r = measure_pushforward_check(lf.system(), leaf, leaf, [](const State&) { return cplx(3.0); }, 1.3);
  EXPECT_EQ(r.z_score, 0.0);
}

TEST(Pushforward, ContractingFiberTransportsLeafMeasure) {
  const PrototypeQPD p = testsupport::linear_damped({1.0});
  const LaminarFlows lf = flows_for(p, FramePolicy::pointwise);
  const auto f = make_observable("fiber_sq", p).f;
  const std::vector<State> starts{make_state({0.0, 1.0})};
  const double t = 2.0;
  const auto source = sample_leaf(lf, LeafSpec{1, {}, 1e-8}, starts, LeafSampling{1000, 20.0, 1}).samples;
  const std::vector<double> shifted{t};
  const auto target = sample_leaf(lf, LeafSpec{1, shifted, 1e-8}, std::vector<State>{make_state({3.0, -1.0})},
                                  LeafSampling{1000, 20.0, 1}).samples;
  EXPECT_LE(measure_pushforward_check(lf.system(), source, target, f, t).z_score, 3.0);
  EXPECT_LE(measure_pushforward_check(lf.system(), source, source, f, lf.period(1)).z_score, 3.0);
}

TEST(Pushforward, BatchMeansError) {
  std::vector<cplx> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2) ? 1.0 : -1.0;
  const auto [mean, se] = mean_and_error(v);
  EXPECT_NEAR(std::abs(mean), 0.0, 1e-12);
  EXPECT_NEAR(se, 0.0, 1e-12);
}

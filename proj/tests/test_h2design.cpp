#include <doctest.h>

#include <secgain/h2design.hpp>
#include <secgain/numerics.hpp>

#include <chrono>
#include <cmath>

#include "fixtures.hpp"
#include "test_util.hpp"

using namespace secgain;
using testutil::benchmark_system;

namespace {

struct JointOptimum {
  GainPair gains;
  double gamma = 0.0;
};

// Independent oracle for the joint design: with an invertible input map the
// controller can deaden the state transition outright (K = -G^-1 F), so the
// plant covariance reduces to F P_e F' + R1 and the best observer is the
// steady-state one-step predictor. Both pieces have closed forms, giving the
// exact optimum without any semidefinite programming.
JointOptimum kalman_deadbeat_oracle(const LtiSystem& sys) {
  Matrix p = sys.r1;
  for (int i = 0; i < 100000; ++i) {
    const Matrix s = sys.c * p * sys.c.transpose() + sys.r2;
    const Matrix gain = sys.f * p * sys.c.transpose() * s.inverse();
    const Matrix next = sym(sys.f * p * sys.f.transpose() -
                            gain * s * gain.transpose() + sys.r1);
    const double gap = (next - p).cwiseAbs().maxCoeff();
    p = next;
    if (gap < 1e-15) break;
  }
  JointOptimum out;
  const Matrix s = sys.c * p * sys.c.transpose() + sys.r2;
  out.gains.l = sys.f * p * sys.c.transpose() * s.inverse();
  out.gains.k = -sys.g.inverse() * sys.f;
  const Matrix p_x = sys.f * p * sys.f.transpose() + sys.r1;
  out.gamma = std::sqrt(((sys.c * p_x * sys.c.transpose()).trace() + sys.r2.trace()) /
                        (sys.r1.trace() + sys.r2.trace()));
  return out;
}

}  // namespace

TEST_CASE("open-loop cost ratio matches the zero-gain evaluation") {
  const LtiSystem sys = benchmark_system();
  const double g0 = open_loop_gamma(sys);

  // independent covariance oracle: truncated power sum of F^k R1 F^k'
  Matrix p_sum = Matrix::Zero(2, 2);
  Matrix fk = Matrix::Identity(2, 2);
  for (int k = 0; k < 4000; ++k) {
    p_sum += fk * sys.r1 * fk.transpose();
    fk = sys.f * fk;
  }
  const double g0_oracle =
      std::sqrt(((sys.c * p_sum * sys.c.transpose()).trace() + sys.r2.trace()) /
                (sys.r1.trace() + sys.r2.trace()));
  CHECK(g0 == doctest::Approx(g0_oracle).epsilon(1e-9));
  CHECK(g0 == doctest::Approx(10.19).epsilon(2e-3));

  GainPair zero;
  zero.k = Matrix::Zero(2, 2);
  zero.l = Matrix::Zero(2, 2);
  const GammaEval eval = evaluate_gamma(sys, zero);
  REQUIRE(eval.stable);
  CHECK(eval.gamma == doctest::Approx(g0).epsilon(1e-12));

  // and the covariance solves the open-loop fixed point
  const Matrix p0 = dlyap(sys.f, sys.r1);
  CHECK((eval.p_x - p0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("destabilizing feedback is flagged, not evaluated") {
  const LtiSystem sys = benchmark_system();
  GainPair bad;
  bad.k = Matrix::Identity(2, 2) * 10.0;
  bad.l = Matrix::Zero(2, 2);
  const GammaEval eval = evaluate_gamma(sys, bad);
  CHECK_FALSE(eval.stable);
  CHECK(std::isnan(eval.gamma));
  CHECK(eval.p_x.size() == 0);
}

TEST_CASE("joint design reaches the analytic optimum on the benchmark") {
  const LtiSystem sys = benchmark_system();
  const auto start = std::chrono::steady_clock::now();
  const H2Design design = optimal_occ_h2(sys);
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  MESSAGE("joint design: ", elapsed.count(), " ms, ", design.sdp_iterations, " iterations");

  const JointOptimum oracle = kalman_deadbeat_oracle(sys);
  CHECK(design.gamma == doctest::Approx(oracle.gamma).epsilon(1e-6));
  CHECK(design.factorization.total_candidates == 6);
  CHECK(design.factorization.solutions.size() == 2);

  CAPTURE(design.gains.l);
  CAPTURE(design.gains.k);
  // the observer gain is pinned sharply; the controller sits in a flat valley
  // around the deadbeat gain where the cost is insensitive
  CHECK((design.gains.l - oracle.gains.l).cwiseAbs().maxCoeff() < 5e-3);
  CHECK((design.gains.k - oracle.gains.k).cwiseAbs().maxCoeff() < 2e-2);

  // the recovered gains reproduce the program covariance
  CHECK(design.mae_lyapunov < 1e-4);
  CHECK(evaluate_gamma(sys, design.gains).gamma == doctest::Approx(design.gamma).epsilon(1e-3));

  // factorization identity of the stacked covariance inverse
  REQUIRE(design.selected >= 0);
  const Matrix q12 = design.candidates[design.selected].q12;
  const Matrix identity_gap = design.p_x * design.q1 +
                              design.p_xxhat * q12.transpose() -
                              Matrix::Identity(2, 2);
  CHECK(identity_gap.cwiseAbs().maxCoeff() < 1e-4);

  // selected pair is stable in both loops
  CHECK(design.candidates[design.selected].rho_controller < 1.0);
  CHECK(design.candidates[design.selected].rho_estimator < 1.0);
  CHECK(elapsed.count() < 10000);
}

TEST_CASE("design beats the open loop and the tabulated rounded gains") {
  const LtiSystem sys = benchmark_system();
  const H2Design design = optimal_occ_h2(sys);
  CHECK(design.gamma < open_loop_gamma(sys));
  // tabulated gains can only do as well as the exact optimum, and sit in the
  // same flat valley
  const GammaEval rounded = evaluate_gamma(sys, testutil::benchmark_h2_gains());
  REQUIRE(rounded.stable);
  CHECK(design.gamma <= rounded.gamma + 1e-6);
  CHECK(rounded.gamma - design.gamma < 5e-4);
}

TEST_CASE("scalar design is confirmed by an exhaustive gain sweep") {
  Matrix f(1, 1), g(1, 1), c(1, 1), r1(1, 1), r2(1, 1);
  f << 0.8;
  g << 1.0;
  c << 1.0;
  r1 << 0.09;
  r2 << 0.04;
  const LtiSystem sys(f, g, c, r1, r2);

  const H2Design design = optimal_occ_h2(sys);
  const double via_eval = evaluate_gamma(sys, design.gains).gamma;
  CHECK(via_eval == doctest::Approx(design.gamma).epsilon(1e-6));

  double sweep_best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 220; ++i) {
    for (int j = 0; j <= 220; ++j) {
      GainPair gp;
      gp.k = Matrix::Constant(1, 1, -2.0 + 4.0 * i / 220.0);
      gp.l = Matrix::Constant(1, 1, -2.0 + 4.0 * j / 220.0);
      try {
        const GammaEval eval = evaluate_gamma(sys, gp);
        if (eval.stable) sweep_best = std::min(sweep_best, eval.gamma);
      } catch (const NumericalError&) {
        // loops grazing the unit circle have no well-conditioned covariance
      }
    }
  }
  // the program value is a true lower bound and the sweep gets close to it
  CHECK(design.gamma <= sweep_best + 1e-9);
  CHECK(sweep_best - design.gamma < 5e-3);
}

TEST_CASE("candidate ranking can use the certified reachable set") {
  const LtiSystem sys = benchmark_system();
  H2Options opts;
  opts.rank_detector = make_detector(0.05, 2);
  opts.rank_truncation = make_truncation(sys);
  const H2Design design = optimal_occ_h2(sys, opts);
  REQUIRE(design.selected >= 0);
  // scores are certified traces now; the winner still stabilizes both loops
  CHECK(design.candidates[design.selected].stable);
  CHECK(design.gamma == doctest::Approx(kalman_deadbeat_oracle(sys).gamma).epsilon(1e-6));
}

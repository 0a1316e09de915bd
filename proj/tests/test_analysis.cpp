#include <doctest.h>

#include <secgain/analysis.hpp>
#include <secgain/numerics.hpp>
#include <secgain/sdp.hpp>

#include <chrono>
#include <random>

#include "fixtures.hpp"
#include "test_util.hpp"

using namespace secgain;
using testutil::benchmark_system;

namespace {

Vector random_unit(std::mt19937& gen, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  double norm = 0.0;
  do {
    for (int i = 0; i < dim; ++i) v(i) = normal(gen);
    norm = v.norm();
  } while (norm < 1e-8);
  return v / norm;
}

sdp::MatExpr scaled_by(const sdp::SdpProblem& prob, sdp::VarHandle v, const Matrix& m) {
  sdp::MatExpr e = sdp::MatExpr::zero(m.rows(), m.cols());
  for (int j = 0; j < m.cols(); ++j) {
    Matrix basis = Matrix::Zero(1, m.cols());
    basis(0, j) = 1.0;
    e += Matrix(m.col(j)) * prob.var(v) * basis;
  }
  return e;
}

// Independent oracle: pose the rate-a certificate as a semidefinite program
// and minimize the plant-block trace over Q and the budget split directly.
double sdp_rate_objective(const LtiSystem& sys, const GainPair& gains, double alpha,
                          double nu_bar, double a) {
  const StackedSystem st = build_stacked(sys, gains);
  const ResidualCovariance rc = residual_covariance(sys, gains.l);
  const Matrix nu_shape = sym(inverse_spd(sys.r1)) / nu_bar;
  const Matrix pi_shape = sym(inverse_spd(rc.sigma)) / alpha;
  const int n3 = 3 * sys.n;
  const double wf = (1.0 - a) / (2.0 - a);

  sdp::SdpProblem prob;
  const auto q = prob.add_symmetric_var("Q", n3);
  const auto a1 = prob.add_scalar_var("a1", 0.0, 1.0 - 1e-6);
  const auto a2 = prob.add_scalar_var("a2", 0.0, 1.0 - 1e-6);

  auto blocks = sdp::BlockExpr::make_symmetric({n3, n3, sys.n, sys.p});
  blocks.set(0, 0, a * prob.var(q));
  blocks.set(0, 1, prob.var(q) * st.a.transpose());
  blocks.set(1, 1, prob.var(q));
  blocks.set(1, 2, sdp::MatExpr::constant(st.b.leftCols(sys.n)));
  blocks.set(1, 3, sdp::MatExpr::constant(st.b.rightCols(sys.p)));
  blocks.set(2, 2, sdp::MatExpr::constant(wf * nu_shape) - scaled_by(prob, a1, wf * nu_shape));
  blocks.set(3, 3, sdp::MatExpr::constant(wf * pi_shape) - scaled_by(prob, a2, wf * pi_shape));
  prob.add_psd_block(blocks.assemble());

  sdp::LinExpr budget;
  budget.constant = a;
  prob.add_linear_leq(budget - prob.scalar(a1) - prob.scalar(a2));

  Matrix sel = Matrix::Zero(n3, n3);
  sel.topLeftCorner(sys.n, sys.n) = Matrix::Identity(sys.n, sys.n);
  prob.minimize(prob.trace_of(sel, q));

  const sdp::SdpSolution sol = sdp::solve(prob);
  REQUIRE(sol.status == sdp::SolveStatus::kOptimal);
  return sol.objective_value;
}

}  // namespace

TEST_CASE("memoryless plant has a closed-form optimal bound") {
  // With F = 0 and zero gains the stacked map is pure noise feedthrough, and
  // the smallest certified state block is nu_bar * r1 * (2 - a) / (1 - a) at
  // the smallest scanned contraction rate.
  Matrix f(1, 1), g(1, 1), c(1, 1), r1(1, 1), r2(1, 1);
  f << 0.0;
  g << 1.0;
  c << 1.0;
  r1 << 0.04;
  r2 << 0.01;
  const LtiSystem sys(f, g, c, r1, r2);
  GainPair gains;
  gains.k = Matrix::Zero(1, 1);
  gains.l = Matrix::Zero(1, 1);
  const DetectorConfig det = make_detector(0.05, 1);
  const TruncationConfig trunc = make_truncation(sys);

  const ReachBound bound = bound_reachable_set(sys, gains, det, trunc);

  CHECK(bound.a == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(bound.a1 < 1e-4);
  CHECK(bound.a1 + bound.a2 >= bound.a - 1e-6);
  const double expected = trunc.nu_bar * 0.04 * (2.0 - 0.01) / (1.0 - 0.01);
  CHECK(bound.objective == doctest::Approx(expected).epsilon(1e-4));
  CHECK(bound.state_bound.q(0, 0) == doctest::Approx(expected).epsilon(1e-4));
  // every rate certifies a memoryless map
  CHECK(bound.feasible_a.size() == default_contraction_grid().size());
}

TEST_CASE("grid scan agrees with a direct semidefinite solve") {
  Matrix f(1, 1), g(1, 1), c(1, 1), r1(1, 1), r2(1, 1);

  struct Scenario {
    double f, g, c, r1, r2, k, l;
    std::vector<double> rates;
  };
  const std::vector<Scenario> scenarios = {
      {0.5, 1.0, 1.0, 0.04, 0.01, -0.3, 0.4, {0.3, 0.6, 0.9}},
      {-0.7, 2.0, 1.5, 0.09, 0.02, 0.25, -0.2, {0.55, 0.8}},
  };
  for (const Scenario& sc : scenarios) {
    f << sc.f;
    g << sc.g;
    c << sc.c;
    r1 << sc.r1;
    r2 << sc.r2;
    const LtiSystem sys(f, g, c, r1, r2);
    GainPair gains;
    gains.k = Matrix::Constant(1, 1, sc.k);
    gains.l = Matrix::Constant(1, 1, sc.l);
    const DetectorConfig det = make_detector(0.05, 1);
    const TruncationConfig trunc = make_truncation(sys);
    for (double a : sc.rates) {
      CAPTURE(sc.f);
      CAPTURE(a);
      ReachOptions opts;
      opts.a_grid = {a};
      const ReachBound bound = bound_reachable_set(sys, gains, det, trunc, opts);
      const double via_sdp = sdp_rate_objective(sys, gains, det.alpha, trunc.nu_bar, a);
      CHECK(bound.objective ==
            doctest::Approx(via_sdp).epsilon(1e-4));
    }
  }
}

TEST_CASE("benchmark bound is certified and contains sampled trajectories") {
  const LtiSystem sys = benchmark_system();
  const GainPair gains = testutil::benchmark_h2_gains();
  const DetectorConfig det = make_detector(0.05, 2);
  const TruncationConfig trunc = make_truncation(sys);

  const ReachBound bound = bound_reachable_set(sys, gains, det, trunc);

  CHECK(bound.a > 0.0);
  CHECK(bound.a < 1.0);
  CHECK(bound.a1 + bound.a2 >= bound.a - 1e-6);
  CHECK(bound.objective > 0.0);
  CHECK(std::count(bound.feasible_a.begin(), bound.feasible_a.end(), bound.a) == 1);

  // independent re-verification of the returned certificate
  const StackedSystem st = build_stacked(sys, gains);
  const ResidualCovariance rc = residual_covariance(sys, gains.l);
  const Matrix w =
      disturbance_shape(sys.r1, rc.sigma, det.alpha, trunc.nu_bar, bound.a1, bound.a2);
  const Matrix cert = contraction_certificate(st.a, st.b, w, bound.q, bound.a);
  CHECK(is_psd(cert, 1e-6 * (1.0 + cert.cwiseAbs().maxCoeff())));
  CHECK(is_psd(bound.q, 1e-9));
  CHECK(is_psd(bound.state_bound.q, 1e-9));
  CHECK(bound.objective ==
        doctest::Approx(bound.state_bound.q.trace()).epsilon(1e-6));

  // the certified set is invariant for every admissible disturbance sequence
  std::mt19937 gen(2024);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Matrix r1_half = sqrt_psd(sys.r1);
  const Matrix sigma_half = sqrt_psd(rc.sigma);
  Ellipsoid full;
  full.q = bound.q;
  Vector xi = Vector::Zero(6);
  double worst_full = 0.0, worst_state = 0.0;
  for (int k = 0; k < 3000; ++k) {
    const double u_nu = (k % 3 == 0) ? 1.0 : unif(gen);
    const double u_phi = (k % 3 == 1) ? 1.0 : unif(gen);
    const Vector nu = std::sqrt(trunc.nu_bar * u_nu) * (r1_half * random_unit(gen, 2));
    const Vector phi = std::sqrt(det.alpha * u_phi) * (sigma_half * random_unit(gen, 2));
    Vector mu(4);
    mu << nu, phi;
    xi = st.a * xi + st.b * mu;
    worst_full = std::max(worst_full, full.quad_form(xi));
    worst_state = std::max(worst_state, bound.state_bound.quad_form(xi.head(2)));
  }
  CHECK(worst_full <= 1.0 + 1e-6);
  CHECK(worst_state <= 1.0 + 1e-6);
  // the sampled attack actually exercises a sizable part of the set
  CHECK(worst_state > 0.05);
}

TEST_CASE("a larger undetected-attack budget never shrinks the bound") {
  const LtiSystem sys = benchmark_system();
  const GainPair gains = testutil::benchmark_h2_gains();
  const TruncationConfig trunc = make_truncation(sys);
  ReachOptions opts;
  opts.a_grid = {0.75, 0.8, 0.85, 0.9, 0.95};

  const ReachBound tight =
      bound_reachable_set(sys, gains, make_detector(0.5, 2), trunc, opts);
  const ReachBound loose =
      bound_reachable_set(sys, gains, make_detector(0.05, 2), trunc, opts);
  CHECK(tight.objective <= loose.objective * (1.0 + 1e-6) + 1e-9);
}

TEST_CASE("destabilizing gains are rejected up front") {
  const LtiSystem sys = benchmark_system();
  const DetectorConfig det = make_detector(0.05, 2);
  const TruncationConfig trunc = make_truncation(sys);

  GainPair bad_k;
  bad_k.k = Matrix::Identity(2, 2) * 10.0;
  bad_k.l = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(bound_reachable_set(sys, bad_k, det, trunc), UnstableError);

  GainPair bad_l;
  bad_l.k = Matrix::Zero(2, 2);
  bad_l.l = Matrix::Identity(2, 2) * 5.0;
  CHECK_THROWS_AS(bound_reachable_set(sys, bad_l, det, trunc), UnstableError);
}

TEST_CASE("a grid below the decay rate is reported infeasible") {
  const LtiSystem sys = benchmark_system();
  const GainPair gains = testutil::benchmark_h2_gains();
  ReachOptions opts;
  opts.a_grid = {0.05};
  CHECK_THROWS_AS(
      bound_reachable_set(sys, gains, make_detector(0.05, 2), make_truncation(sys), opts),
      InfeasibleError);
}

TEST_CASE("input validation for the bound computation") {
  const LtiSystem sys = benchmark_system();
  const GainPair gains = testutil::benchmark_h2_gains();
  const TruncationConfig trunc = make_truncation(sys);

  CHECK_THROWS_AS(bound_reachable_set(sys, gains, make_detector(0.05, 3), trunc),
                  ArgumentError);
  ReachOptions opts;
  opts.a_grid = {1.5};
  CHECK_THROWS_AS(bound_reachable_set(sys, gains, make_detector(0.05, 2), trunc, opts),
                  ArgumentError);
  CHECK_THROWS_AS(disturbance_shape(sys.r1, sys.r2, -1.0, 1.0, 0.1, 0.1), ArgumentError);
  CHECK_THROWS_AS(
      contraction_certificate(Matrix::Zero(2, 2), Matrix::Zero(3, 1), Matrix::Zero(1, 1),
                              Matrix::Identity(2, 2), 0.5),
      ArgumentError);
}

TEST_CASE("boundary points lie exactly on the unit level set") {
  Ellipsoid e;
  e.q = Matrix(2, 2);
  e.q << 4.0, 1.0, 1.0, 2.0;
  const Matrix pts = ellipsoid_boundary_points(e, 64);
  REQUIRE(pts.cols() == 64);
  for (int j = 0; j < pts.cols(); ++j) {
    CHECK(e.quad_form(pts.col(j)) == doctest::Approx(1.0).epsilon(1e-10));
  }
  e.q = Matrix::Identity(2, 2) * 4.0;
  const Matrix circle = ellipsoid_boundary_points(e, 17);
  for (int j = 0; j < circle.cols(); ++j) {
    CHECK(circle.col(j).norm() == doctest::Approx(2.0).epsilon(1e-12));
  }
  Ellipsoid bad;
  bad.q = Matrix::Identity(3, 3);
  CHECK_THROWS_AS(ellipsoid_boundary_points(bad, 8), ArgumentError);
  CHECK_THROWS_AS(ellipsoid_boundary_points(e, 0), ArgumentError);
}

TEST_CASE("full-grid scan timing stays workable") {
  const LtiSystem sys = benchmark_system();
  const GainPair gains = testutil::benchmark_h2_gains();
  const auto start = std::chrono::steady_clock::now();
  const ReachBound bound =
      bound_reachable_set(sys, gains, make_detector(0.05, 2), make_truncation(sys));
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - start);
  MESSAGE("full 99-point scan: ", elapsed.count(), " ms, best a ", bound.a, ", objective ",
          bound.objective);
  CHECK(elapsed.count() < 120000);
}

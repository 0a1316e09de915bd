#include <doctest.h>

#include <secgain/json_io.hpp>
#include <secgain/model.hpp>
#include <secgain/numerics.hpp>

#include <cstdio>
#include <random>

#include "fixtures.hpp"
#include "test_util.hpp"

using namespace secgain;
using testutil::benchmark_system;

TEST_CASE("system constructor records dimensions") {
  const LtiSystem sys = benchmark_system();
  CHECK(sys.n == 2);
  CHECK(sys.m == 2);
  CHECK(sys.p == 2);
  CHECK(spectral_radius(sys.f) < 1.0);
}

TEST_CASE("system constructor validates inputs") {
  const LtiSystem sys = benchmark_system();

  SUBCASE("wrong G rows") {
    Matrix g(1, 2);
    g << 1, 1;
    CHECK_THROWS_WITH_AS(LtiSystem(sys.f, g, sys.c, sys.r1, sys.r2),
                         doctest::Contains("G"), ArgumentError);
  }
  SUBCASE("wrong C cols") {
    Matrix c(2, 3);
    c.setOnes();
    CHECK_THROWS_WITH_AS(LtiSystem(sys.f, sys.g, c, sys.r1, sys.r2),
                         doctest::Contains("C"), ArgumentError);
  }
  SUBCASE("R1 not positive definite") {
    Matrix r1(2, 2);
    r1 << 1, 2, 2, 1;
    CHECK_THROWS_WITH_AS(LtiSystem(sys.f, sys.g, sys.c, r1, sys.r2),
                         doctest::Contains("R1"), ArgumentError);
  }
  SUBCASE("R1 not symmetric") {
    Matrix r1(2, 2);
    r1 << 1, 0.5, 0, 1;
    CHECK_THROWS_WITH_AS(LtiSystem(sys.f, sys.g, sys.c, r1, sys.r2),
                         doctest::Contains("R1"), ArgumentError);
  }
  SUBCASE("R2 wrong size") {
    Matrix r2 = Matrix::Identity(3, 3);
    CHECK_THROWS_WITH_AS(LtiSystem(sys.f, sys.g, sys.c, sys.r1, r2),
                         doctest::Contains("R2"), ArgumentError);
  }
  SUBCASE("unstable F rejected") {
    Matrix f = Matrix::Identity(2, 2) * 1.2;
    CHECK_THROWS_AS(LtiSystem(f, sys.g, sys.c, sys.r1, sys.r2), UnstableError);
  }
}

TEST_CASE("detectability and stabilizability tests") {
  const LtiSystem sys = benchmark_system();
  CHECK(is_detectable(sys.f, sys.c));
  CHECK(is_stabilizable(sys.f, sys.g));

  // unstable mode invisible from the output
  Matrix f(2, 2);
  f << 2.0, 0.0, 0.0, 0.5;
  Matrix c(1, 2);
  c << 0.0, 1.0;
  CHECK_FALSE(is_detectable(f, c));
  CHECK(is_detectable(f, Matrix::Identity(2, 2)));

  // unstable mode unreachable from the input
  Matrix g(2, 1);
  g << 0.0, 1.0;
  CHECK_FALSE(is_stabilizable(f, g));
  CHECK(is_stabilizable(f, Matrix::Identity(2, 2)));

  // stable modes never need the rank condition
  Matrix f_stable = Matrix::Identity(2, 2) * 0.5;
  CHECK(is_detectable(f_stable, Matrix::Zero(1, 2)));
  CHECK(is_stabilizable(f_stable, Matrix::Zero(2, 1)));
}

TEST_CASE("detector threshold matches the chi-squared quantile") {
  const DetectorConfig det = make_detector(0.05, 2);
  CHECK(det.alpha == doctest::Approx(5.9915).epsilon(1e-4));
  CHECK(det.alpha == doctest::Approx(-2.0 * std::log(0.05)).epsilon(1e-12));
  // round trip: the exceedance probability at the threshold is the alarm rate
  CHECK(1.0 - chi2_cdf(det.alpha, 2) == doctest::Approx(0.05).epsilon(1e-9));

  const DetectorConfig det3 = make_detector(0.01, 3);
  CHECK(1.0 - chi2_cdf(det3.alpha, 3) == doctest::Approx(0.01).epsilon(1e-9));

  CHECK_THROWS_AS(make_detector(0.0, 2), ArgumentError);
  CHECK_THROWS_AS(make_detector(1.0, 2), ArgumentError);
  CHECK_THROWS_AS(make_detector(0.05, 0), ArgumentError);
}

TEST_CASE("noise truncation radii come from per-signal quantiles") {
  const LtiSystem sys = benchmark_system();
  const TruncationConfig t = make_truncation(sys);
  CHECK(t.nu_bar == doctest::Approx(chi2_quantile(0.95, 2)).epsilon(1e-12));
  CHECK(t.e_bar == doctest::Approx(chi2_quantile(0.95, 2)).epsilon(1e-12));
  CHECK(t.eta_bar == doctest::Approx(chi2_quantile(0.95, 2)).epsilon(1e-12));

  const TruncationConfig t2 = make_truncation(sys, 0.99, 0.9, 0.8);
  CHECK(t2.nu_bar == doctest::Approx(chi2_quantile(0.99, 2)).epsilon(1e-12));
  CHECK(t2.e_bar == doctest::Approx(chi2_quantile(0.9, 2)).epsilon(1e-12));
  CHECK(t2.eta_bar == doctest::Approx(chi2_quantile(0.8, 2)).epsilon(1e-12));

  CHECK_THROWS_AS(make_truncation(sys, 1.0, 0.95, 0.95), ArgumentError);
}

TEST_CASE("stacked closed loop matches the componentwise recursion") {
  const LtiSystem sys = benchmark_system();
  std::mt19937 gen(71);
  for (int trial = 0; trial < 20; ++trial) {
    GainPair gp;
    gp.k = testutil::random_matrix(gen, sys.m, sys.n);
    gp.l = testutil::random_matrix(gen, sys.n, sys.p);
    const StackedSystem st = build_stacked(sys, gp);

    REQUIRE(st.a.rows() == 6);
    REQUIRE(st.b.cols() == 4);

    const Vector x = testutil::random_matrix(gen, sys.n, 1);
    const Vector xhat = testutil::random_matrix(gen, sys.n, 1);
    const Vector e = testutil::random_matrix(gen, sys.n, 1);
    const Vector nu = testutil::random_matrix(gen, sys.n, 1);
    const Vector phi = testutil::random_matrix(gen, sys.p, 1);

    Vector xi(3 * sys.n);
    xi << x, xhat, e;
    Vector mu(sys.n + sys.p);
    mu << nu, phi;
    const Vector next = st.a * xi + st.b * mu;

    // plant driven by estimated-state feedback
    const Vector x_next = sys.f * x + sys.g * gp.k * xhat + nu;
    // estimator fed the falsified output C(x - e) + phi
    const Vector y_tilde = sys.c * (x - e) + phi;
    const Vector xhat_next =
        sys.f * xhat + sys.g * gp.k * xhat + gp.l * (y_tilde - sys.c * xhat);
    // falsification-induced error channel
    const Vector e_next = sys.f * e + nu - gp.l * phi;

    CHECK((next.segment(0, 2) - x_next).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((next.segment(2, 2) - xhat_next).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((next.segment(4, 2) - e_next).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("nominal sub-system is the exact leading block") {
  const LtiSystem sys = benchmark_system();
  GainPair gp;
  std::mt19937 gen(5);
  gp.k = testutil::random_matrix(gen, sys.m, sys.n);
  gp.l = testutil::random_matrix(gen, sys.n, sys.p);
  const StackedSystem st = build_stacked(sys, gp);

  CHECK((st.a_hat - st.a.topLeftCorner(4, 4)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.b_hat - st.b.topRows(4)).cwiseAbs().maxCoeff() == 0.0);

  // selectors pick out the advertised coordinates
  Vector xi(6);
  xi << 1, 2, 3, 4, 5, 6;
  CHECK((st.e_x * xi - xi.segment(0, 2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.e_xxhat * xi - xi.segment(0, 4)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.e_hat_x * xi.segment(0, 4) - xi.segment(0, 2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("build_stacked validates gain shapes") {
  const LtiSystem sys = benchmark_system();
  GainPair gp;
  gp.k = Matrix::Zero(1, 2);
  gp.l = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(build_stacked(sys, gp), ArgumentError);
  gp.k = Matrix::Zero(2, 2);
  gp.l = Matrix::Zero(2, 1);
  CHECK_THROWS_AS(build_stacked(sys, gp), ArgumentError);
}

TEST_CASE("residual covariance solves the estimator fixed point") {
  const LtiSystem sys = benchmark_system();

  SUBCASE("zero gain reduces to the open-loop state covariance") {
    const Matrix l = Matrix::Zero(2, 2);
    const ResidualCovariance rc = residual_covariance(sys, l);
    const Matrix expected = dlyap(sys.f, sys.r1);
    CHECK((rc.p_e - expected).cwiseAbs().maxCoeff() < 1e-12);
    const Matrix sigma = sys.c * expected * sys.c.transpose() + sys.r2;
    CHECK((rc.sigma - sigma).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("generic gain satisfies the defining equation") {
    Matrix l(2, 2);
    l << 0.3, -0.1, 0.05, 0.2;
    const ResidualCovariance rc = residual_covariance(sys, l);
    const Matrix acl = sys.f - l * sys.c;
    const Matrix resid = rc.p_e - acl * rc.p_e * acl.transpose() -
                         (sys.r1 + l * sys.r2 * l.transpose());
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-10);
    CHECK(is_psd(rc.sigma, 0.0));
  }

  SUBCASE("destabilizing gain is rejected") {
    Matrix f = Matrix::Identity(2, 2) * 0.5;
    const LtiSystem simple(f, Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                           Matrix::Identity(2, 2), Matrix::Identity(2, 2));
    Matrix l(2, 2);
    l << -1.0, 0.0, 0.0, 0.0;
    CHECK_THROWS_AS(residual_covariance(simple, l), UnstableError);
  }
}

TEST_CASE("ellipsoid membership uses the shape quadratic form") {
  Ellipsoid ell;
  ell.q = Matrix::Identity(2, 2) * 4.0;
  Vector z(2);
  z << 2.0, 0.0;
  CHECK(ell.quad_form(z) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ell.contains(z, 1e-9));
  z << 2.1, 0.0;
  CHECK_FALSE(ell.contains(z));
  z << 0.5, -0.5;
  CHECK(ell.contains(z));
}

TEST_CASE("json round trips preserve systems and gains") {
  const LtiSystem sys = benchmark_system();
  const nlohmann::json j = system_to_json(sys);
  const LtiSystem back = system_from_json(j);
  CHECK((back.f - sys.f).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.g - sys.g).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.c - sys.c).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.r1 - sys.r1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.r2 - sys.r2).cwiseAbs().maxCoeff() == 0.0);

  GainPair gp = testutil::benchmark_h2_gains();
  const GainPair gback = gains_from_json(gains_to_json(gp));
  CHECK((gback.k - gp.k).cwiseAbs().maxCoeff() == 0.0);
  CHECK((gback.l - gp.l).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("json loading reports the offending field") {
  nlohmann::json j = system_to_json(benchmark_system());

  SUBCASE("missing field") {
    j.erase("R2");
    CHECK_THROWS_WITH_AS(system_from_json(j), doctest::Contains("R2"), ArgumentError);
  }
  SUBCASE("ragged rows") {
    j["F"] = nlohmann::json::array({{1.0, 2.0}, {3.0}});
    CHECK_THROWS_WITH_AS(system_from_json(j), doctest::Contains("F"), ArgumentError);
  }
  SUBCASE("dimension mismatch") {
    j["G"] = nlohmann::json::array({{1.0, 2.0}});
    CHECK_THROWS_WITH_AS(system_from_json(j), doctest::Contains("G"), ArgumentError);
  }
  SUBCASE("non-numeric entry") {
    j["C"][0][1] = "x";
    CHECK_THROWS_WITH_AS(system_from_json(j), doctest::Contains("C"), ArgumentError);
  }
}

TEST_CASE("json files round trip through disk") {
  const std::string path = "model_io_roundtrip.json";
  const LtiSystem sys = benchmark_system();
  write_json_file(path, system_to_json(sys));
  const LtiSystem back = load_system(path);
  CHECK((back.f - sys.f).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());

  CHECK_THROWS_WITH_AS(load_json_file("does_not_exist.json"),
                       doctest::Contains("does_not_exist"), ArgumentError);
}

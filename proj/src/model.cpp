#include "secgain/model.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "secgain/numerics.hpp"

namespace secgain {

namespace {

void require_spd(const Matrix& m, const char* name) {
  const double scale = 1.0 + m.cwiseAbs().maxCoeff();
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    std::ostringstream os;
    os << name << " must be symmetric";
    throw ArgumentError(os.str());
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym(m), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    std::ostringstream os;
    os << name << " must be positive definite (min eigenvalue "
       << es.eigenvalues().minCoeff() << ")";
    throw ArgumentError(os.str());
  }
}

/// PBH rank test helper: full column rank of the stacked/augmented pencil at
// every eigenvalue of F with |lambda| >= 1.
bool pbh_full_rank(const Matrix& f, const Matrix& other, bool stack_below) {
  const Eigen::Index n = f.rows();
  Eigen::EigenSolver<Matrix> es(f, /*computeEigenvectors=*/false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::complex<double> lam = es.eigenvalues()(i);
    if (std::abs(lam) < 1.0 - 1e-9) continue;
    Eigen::MatrixXcd pencil;
    if (stack_below) {
      pencil.resize(n + other.rows(), n);
      pencil.topRows(n) = lam * Eigen::MatrixXcd::Identity(n, n) - f.cast<std::complex<double>>();
      pencil.bottomRows(other.rows()) = other.cast<std::complex<double>>();
    } else {
      pencil.resize(n, n + other.cols());
      pencil.leftCols(n) = lam * Eigen::MatrixXcd::Identity(n, n) - f.cast<std::complex<double>>();
      pencil.rightCols(other.cols()) = other.cast<std::complex<double>>();
    }
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(pencil);
    const auto& sv = svd.singularValues();
    const double tol = std::max(pencil.rows(), pencil.cols()) *
                       std::numeric_limits<double>::epsilon() * sv.maxCoeff();
    Eigen::Index rank = 0;
    for (Eigen::Index k = 0; k < sv.size(); ++k) {
      if (sv(k) > tol) ++rank;
    }
    if (rank < n) return false;
  }
  return true;
}

}  // namespace

bool is_detectable(const Matrix& f, const Matrix& c) {
  if (f.rows() != f.cols() || c.cols() != f.rows()) {
    throw ArgumentError("is_detectable: C columns must match F dimension");
  }
  return pbh_full_rank(f, c, /*stack_below=*/true);
}

bool is_stabilizable(const Matrix& f, const Matrix& g) {
  if (f.rows() != f.cols() || g.rows() != f.rows()) {
    throw ArgumentError("is_stabilizable: G rows must match F dimension");
  }
  return pbh_full_rank(f, g, /*stack_below=*/false);
}

LtiSystem::LtiSystem(Matrix f_in, Matrix g_in, Matrix c_in, Matrix r1_in, Matrix r2_in)
    : f(std::move(f_in)),
      g(std::move(g_in)),
      c(std::move(c_in)),
      r1(std::move(r1_in)),
      r2(std::move(r2_in)) {
  if (f.rows() == 0 || f.rows() != f.cols()) {
    throw ArgumentError("F must be square and non-empty");
  }
  n = static_cast<int>(f.rows());
  if (g.rows() != n || g.cols() == 0) {
    std::ostringstream os;
    os << "G must have " << n << " rows, got " << g.rows() << "x" << g.cols();
    throw ArgumentError(os.str());
  }
  m = static_cast<int>(g.cols());
  if (c.cols() != n || c.rows() == 0) {
    std::ostringstream os;
    os << "C must have " << n << " columns, got " << c.rows() << "x" << c.cols();
    throw ArgumentError(os.str());
  }
  p = static_cast<int>(c.rows());
  if (r1.rows() != n || r1.cols() != n) {
    throw ArgumentError("R1 must match the state dimension");
  }
  if (r2.rows() != p || r2.cols() != p) {
    throw ArgumentError("R2 must match the output dimension");
  }
  require_spd(r1, "R1");
  require_spd(r2, "R2");
  const double rho = spectral_radius(f);
  if (rho >= 1.0) {
    std::ostringstream os;
    os << "F must be Schur stable, spectral radius is " << rho;
    throw UnstableError(os.str());
  }
  if (!is_detectable(f, c)) throw ArgumentError("(F, C) is not detectable");
  if (!is_stabilizable(f, g)) throw ArgumentError("(F, G) is not stabilizable");
}

DetectorConfig make_detector(double false_alarm_rate, int dof) {
  if (!(false_alarm_rate > 0.0 && false_alarm_rate < 1.0)) {
    throw ArgumentError("make_detector: false alarm rate must lie in (0, 1)");
  }
  if (dof < 1) throw ArgumentError("make_detector: dof must be at least 1");
  DetectorConfig d;
  d.false_alarm_rate = false_alarm_rate;
  d.dof = dof;
  d.alpha = chi2_quantile(1.0 - false_alarm_rate, dof);
  return d;
}

TruncationConfig make_truncation(const LtiSystem& sys, double p_nu, double p_e, double p_eta) {
  for (double pr : {p_nu, p_e, p_eta}) {
    if (!(pr > 0.0 && pr < 1.0)) {
      throw ArgumentError("make_truncation: coverage probabilities must lie in (0, 1)");
    }
  }
  TruncationConfig t;
  t.p_nu = p_nu;
  t.p_e = p_e;
  t.p_eta = p_eta;
  t.nu_bar = chi2_quantile(p_nu, sys.n);
  t.e_bar = chi2_quantile(p_e, sys.n);
  t.eta_bar = chi2_quantile(p_eta, sys.p);
  return t;
}

StackedSystem build_stacked(const LtiSystem& sys, const GainPair& gains) {
  const int n = sys.n, p = sys.p;
  if (gains.k.rows() != sys.m || gains.k.cols() != n) {
    throw ArgumentError("build_stacked: K must be m x n");
  }
  if (gains.l.rows() != n || gains.l.cols() != p) {
    throw ArgumentError("build_stacked: L must be n x p");
  }
  const Matrix gk = sys.g * gains.k;
  const Matrix lc = gains.l * sys.c;

  StackedSystem s;
  s.a = Matrix::Zero(3 * n, 3 * n);
  s.a.block(0, 0, n, n) = sys.f;
  s.a.block(0, n, n, n) = gk;
  s.a.block(n, 0, n, n) = lc;
  s.a.block(n, n, n, n) = sys.f + gk - lc;
  s.a.block(n, 2 * n, n, n) = -lc;
  s.a.block(2 * n, 2 * n, n, n) = sys.f;

  s.b = Matrix::Zero(3 * n, n + p);
  s.b.block(0, 0, n, n) = Matrix::Identity(n, n);
  s.b.block(n, n, n, p) = gains.l;
  s.b.block(2 * n, 0, n, n) = Matrix::Identity(n, n);
  s.b.block(2 * n, n, n, p) = -gains.l;

  s.a_hat = s.a.topLeftCorner(2 * n, 2 * n);
  s.b_hat = s.b.topRows(2 * n);

  s.e_x = Matrix::Zero(n, 3 * n);
  s.e_x.leftCols(n) = Matrix::Identity(n, n);
  s.e_xxhat = Matrix::Zero(2 * n, 3 * n);
  s.e_xxhat.leftCols(2 * n) = Matrix::Identity(2 * n, 2 * n);
  s.e_hat_x = Matrix::Zero(n, 2 * n);
  s.e_hat_x.leftCols(n) = Matrix::Identity(n, n);
  return s;
}

ResidualCovariance residual_covariance(const LtiSystem& sys, const Matrix& l) {
  if (l.rows() != sys.n || l.cols() != sys.p) {
    throw ArgumentError("residual_covariance: L must be n x p");
  }
  const Matrix acl = sys.f - l * sys.c;
  const double rho = spectral_radius(acl);
  if (rho >= 1.0) {
    std::ostringstream os;
    os << "residual_covariance: estimator F - L C is unstable (spectral radius " << rho << ")";
    throw UnstableError(os.str());
  }
  const Matrix q = sys.r1 + l * sys.r2 * l.transpose();
  ResidualCovariance out;
  out.p_e = dlyap(acl, q);
  const double resid =
      (out.p_e - acl * out.p_e * acl.transpose() - q).cwiseAbs().maxCoeff();
  if (resid > 1e-10 * std::max(1.0, q.cwiseAbs().maxCoeff())) {
    throw NumericalError("residual_covariance: fixed point residual too large");
  }
  out.sigma = sym(sys.c * out.p_e * sys.c.transpose() + sys.r2);
  Eigen::SelfAdjointEigenSolver<Matrix> es(out.sigma, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw NumericalError("residual_covariance: Sigma is not positive definite");
  }
  return out;
}

double Ellipsoid::quad_form(const Vector& z) const {
  if (q.rows() != z.size()) throw ArgumentError("Ellipsoid::quad_form: dimension mismatch");
  Eigen::LDLT<Matrix> ldlt(sym(q));
  if (ldlt.info() != Eigen::Success) {
    throw NumericalError("Ellipsoid::quad_form: shape matrix factorization failed");
  }
  return z.dot(ldlt.solve(z));
}

bool Ellipsoid::contains(const Vector& z, double tol) const {
  return quad_form(z) <= 1.0 + tol;
}

}  // namespace secgain

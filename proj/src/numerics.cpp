#include "secgain/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace secgain {

namespace {

void require_square(const Matrix& m, const char* name) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    std::ostringstream os;
    os << name << " must be square and non-empty, got " << m.rows() << "x" << m.cols();
    throw ArgumentError(os.str());
  }
}

}  // namespace

double spectral_radius(const Matrix& m) {
  require_square(m, "spectral_radius argument");
  Eigen::EigenSolver<Matrix> es(m, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

bool is_psd(const Matrix& m, double tol) {
  require_square(m, "is_psd argument");
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Matrix sqrt_psd(const Matrix& m, double clamp_tol) {
  require_square(m, "sqrt_psd argument");
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym(m));
  Vector lam = es.eigenvalues();
  const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam(i) < -clamp_tol * scale) {
      throw NumericalError("sqrt_psd: matrix has a significantly negative eigenvalue");
    }
    lam(i) = std::sqrt(std::max(lam(i), 0.0));
  }
  return sym(es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose());
}

double cond2(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return smax / smin;
}

Matrix inverse_spd(const Matrix& m) {
  require_square(m, "inverse_spd argument");
  Eigen::LLT<Matrix> llt(sym(m));
  if (llt.info() != Eigen::Success) {
    throw NumericalError("inverse_spd: Cholesky failed, matrix is not positive definite");
  }
  return sym(llt.solve(Matrix::Identity(m.rows(), m.rows())));
}

Matrix dlyap(const Matrix& a, const Matrix& q) {
  require_square(a, "dlyap A");
  require_square(q, "dlyap Q");
  if (a.rows() != q.rows()) throw ArgumentError("dlyap: A and Q dimensions differ");
  const double rho = spectral_radius(a);
  if (rho >= 1.0) {
    std::ostringstream os;
    os << "dlyap: A is not Schur stable (spectral radius " << rho << ")";
    throw UnstableError(os.str());
  }
  const Eigen::Index n = a.rows();
  const Matrix lhs = Matrix::Identity(n * n, n * n) - kron(a, a);
  const Vector rhs = Eigen::Map<const Vector>(q.data(), n * n);
  Vector vx = lhs.partialPivLu().solve(rhs);
  Matrix x = sym(Eigen::Map<Matrix>(vx.data(), n, n));
  const double resid = (x - a * x * a.transpose() - q).cwiseAbs().maxCoeff();
  if (resid > 1e-6 * std::max(1.0, q.cwiseAbs().maxCoeff())) {
    std::ostringstream os;
    os << "dlyap: residual " << resid << " too large, system is badly conditioned";
    throw NumericalError(os.str());
  }
  return x;
}

namespace {

// Regularized lower incomplete gamma P(a, x) by series (x < a + 1) or by the
// continued fraction for the complement Q(a, x).
double gammp(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw ArgumentError("gammp: bad arguments");
  if (x == 0.0) return 0.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 1000; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  // Lentz continued fraction for Q(a, x).
  const double fpmin = std::numeric_limits<double>::min() / 1e-30;
  double b = x + 1.0 - a;
  double c = 1.0 / fpmin;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < fpmin) d = fpmin;
    c = b + an / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  const double q = std::exp(-x + a * std::log(x) - gln) * h;
  return 1.0 - q;
}

}  // namespace

double chi2_cdf(double x, double dof) {
  if (dof <= 0.0) throw ArgumentError("chi2_cdf: dof must be positive");
  if (x < 0.0) return 0.0;
  return gammp(0.5 * dof, 0.5 * x);
}

double chi2_quantile(double prob, double dof) {
  if (dof <= 0.0) throw ArgumentError("chi2_quantile: dof must be positive");
  if (!(prob >= 0.0 && prob < 1.0)) {
    throw ArgumentError("chi2_quantile: prob must lie in [0, 1)");
  }
  if (prob == 0.0) return 0.0;
  double lo = 0.0;
  double hi = dof + 10.0;
  while (chi2_cdf(hi, dof) < prob) {
    hi *= 2.0;
    if (hi > 1e300) throw NumericalError("chi2_quantile: bracket expansion failed");
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_cdf(mid, dof) < prob) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-13 * (1.0 + hi)) break;
  }
  return 0.5 * (lo + hi);
}

namespace {

using CMatrix = Eigen::MatrixXcd;
using Complex = std::complex<double>;

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

double residual_max_abs(const QuadraticMatrixProblem& p, const Matrix& x) {
  return max_abs(x * p.gamma1 * x + x * p.gamma2 + p.gamma3 * x + p.gamma4);
}

// Visits every size-k subset of {0, ..., n-1}.
template <typename F>
void for_each_subset(int n, int k, F&& visit) {
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    visit(idx);
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

// Attempts X = V U^-1 from a real [U; V] basis; updates the counters in `set`.
void accept_real_basis(const QuadraticMatrixProblem& p, const Matrix& u, const Matrix& v,
                       double cond_limit, RiccatiSolutionSet& set) {
  if (!std::isfinite(cond2(u)) || cond2(u) > cond_limit) {
    ++set.discarded_singular_count;
    return;
  }
  const Matrix x = u.transpose().partialPivLu().solve(v.transpose()).transpose();
  const double resid = residual_max_abs(p, x);
  if (resid < 1e-8) {
    set.solutions.push_back(x);
    set.residuals.push_back(resid);
  } else {
    ++set.discarded_residual_count;
  }
}

void accept_complex_basis(const QuadraticMatrixProblem& p, const CMatrix& u, const CMatrix& v,
                          double cond_limit, RiccatiSolutionSet& set) {
  Eigen::JacobiSVD<CMatrix> svd(u);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  if (smin <= 0.0 || smax / smin > cond_limit) {
    ++set.discarded_singular_count;
    return;
  }
  const CMatrix x = u.transpose().partialPivLu().solve(v.transpose()).transpose();
  const Matrix re = x.real();
  const double im = x.imag().cwiseAbs().maxCoeff();
  if (im >= 1e-7 * (1.0 + max_abs(re))) {
    ++set.discarded_complex_count;
    return;
  }
  const double resid = residual_max_abs(p, re);
  if (resid < 1e-8) {
    set.solutions.push_back(re);
    set.residuals.push_back(resid);
  } else {
    ++set.discarded_residual_count;
  }
}

// Unitary Givens rotation zeroing the second entry of (f, g), LAPACK zlartg
// convention: [conj(c) conj(s); -s c]^H ... we only need G with
// G^H [f; g] = [r; 0], c real.
void zlartg(Complex f, Complex g, double& c, Complex& s) {
  const double af = std::abs(f);
  const double ag = std::abs(g);
  if (ag == 0.0) {
    c = 1.0;
    s = Complex(0.0, 0.0);
    return;
  }
  if (af == 0.0) {
    c = 0.0;
    s = std::conj(g) / ag;
    return;
  }
  const double r = std::hypot(af, ag);
  c = af / r;
  s = (f / af) * std::conj(g) / r;
}

// Swaps the adjacent diagonal entries T(k,k) and T(k+1,k+1) of a complex
// Schur form by a unitary similarity, updating Q accordingly.
void swap_schur_11(CMatrix& t, CMatrix& q, int k) {
  const Complex f = t(k, k + 1);
  const Complex g = t(k + 1, k + 1) - t(k, k);
  double c;
  Complex s;
  zlartg(f, g, c, s);
  const int n = static_cast<int>(t.rows());
  // Row rotation: rows k, k+1 of T.
  for (int j = k; j < n; ++j) {
    const Complex tk = t(k, j), tk1 = t(k + 1, j);
    t(k, j) = c * tk + s * tk1;
    t(k + 1, j) = -std::conj(s) * tk + c * tk1;
  }
  // Column rotation: columns k, k+1 of T and Q.
  for (int i = 0; i <= std::min(k + 1, n - 1); ++i) {
    const Complex tik = t(i, k), tik1 = t(i, k + 1);
    t(i, k) = c * tik + std::conj(s) * tik1;
    t(i, k + 1) = -s * tik + c * tik1;
  }
  for (int i = 0; i < n; ++i) {
    const Complex qik = q(i, k), qik1 = q(i, k + 1);
    q(i, k) = c * qik + std::conj(s) * qik1;
    q(i, k + 1) = -s * qik + c * qik1;
  }
  t(k + 1, k) = Complex(0.0, 0.0);
}

// Enumeration over ordered-Schur invariant subspaces; handles defective M
// where eigenvectors do not span. For each subset the selected eigenvalues
// are bubbled to the leading positions and the leading n Schur vectors form
// the subspace basis.
RiccatiSolutionSet solve_by_schur(const QuadraticMatrixProblem& p, const CMatrix& m,
                                  double cond_limit) {
  const int n2 = static_cast<int>(m.rows());
  const int n = n2 / 2;
  Eigen::ComplexSchur<CMatrix> schur(m, /*computeU=*/true);
  if (schur.info() != Eigen::Success) {
    throw NumericalError("solve_quadratic_matrix_eq: complex Schur decomposition failed");
  }
  RiccatiSolutionSet set;
  for_each_subset(n2, n, [&](const std::vector<int>& subset) {
    ++set.total_candidates;
    CMatrix t = schur.matrixT();
    CMatrix q = schur.matrixU();
    // Bring subset members to positions 0..n-1 while preserving their order.
    std::vector<int> pos(subset.begin(), subset.end());
    for (int target = 0; target < n; ++target) {
      int cur = pos[target];
      for (int k = cur - 1; k >= target; --k) {
        swap_schur_11(t, q, k);
        // Any tracked position sitting at k moves to k+1.
        for (int j = target + 1; j < n; ++j) {
          if (pos[j] == k) pos[j] = k + 1;
        }
      }
      pos[target] = target;
    }
    const CMatrix u = q.topLeftCorner(n, n);
    const CMatrix v = q.bottomLeftCorner(n, n);
    accept_complex_basis(p, u, v, cond_limit, set);
  });
  return set;
}

}  // namespace

RiccatiSolutionSet solve_quadratic_matrix_eq(const QuadraticMatrixProblem& p,
                                             double cond_limit) {
  require_square(p.gamma1, "gamma1");
  const Eigen::Index n = p.gamma1.rows();
  for (const auto* g : {&p.gamma2, &p.gamma3, &p.gamma4}) {
    require_square(*g, "gamma block");
    if (g->rows() != n) throw ArgumentError("solve_quadratic_matrix_eq: block sizes differ");
  }
  Matrix m(2 * n, 2 * n);
  m << -p.gamma2, -p.gamma1, p.gamma4, p.gamma3;

  Eigen::EigenSolver<Matrix> es(m);
  if (es.info() != Eigen::Success) {
    throw NumericalError("solve_quadratic_matrix_eq: eigendecomposition failed");
  }
  const CMatrix vecs = es.eigenvectors();
  const Eigen::VectorXcd vals = es.eigenvalues();

  // Defective M: eigenvectors do not span C^{2n}; enumerate Schur subspaces instead.
  {
    Eigen::JacobiSVD<CMatrix> svd(vecs);
    const double smax = svd.singularValues().maxCoeff();
    const double tol = 2.0 * n * std::numeric_limits<double>::epsilon() * smax;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
      if (svd.singularValues()(i) > std::max(tol, 1e-10 * smax)) ++rank;
    }
    if (rank < 2 * n) return solve_by_schur(p, m.cast<Complex>(), cond_limit);
  }

  // Conjugate pairing. Real eigenvalues pair with nobody (partner = -1).
  const int n2 = static_cast<int>(2 * n);
  std::vector<int> partner(n2, -1);
  for (int i = 0; i < n2; ++i) {
    const double scale = 1.0 + std::abs(vals(i));
    if (std::abs(vals(i).imag()) <= 1e-10 * scale || partner[i] >= 0) continue;
    for (int j = i + 1; j < n2; ++j) {
      if (partner[j] >= 0) continue;
      if (std::abs(vals(j) - std::conj(vals(i))) < 1e-8 * scale) {
        partner[i] = j;
        partner[j] = i;
        break;
      }
    }
  }

  RiccatiSolutionSet set;
  for_each_subset(n2, static_cast<int>(n), [&](const std::vector<int>& subset) {
    ++set.total_candidates;
    std::vector<char> in_subset(n2, 0);
    for (int idx : subset) in_subset[idx] = 1;
    bool closed = true;
    for (int idx : subset) {
      if (partner[idx] >= 0 && !in_subset[partner[idx]]) {
        closed = false;
        break;
      }
    }
    if (closed) {
      // Real basis: real eigenvectors directly, conjugate pairs through
      // their real and imaginary parts (one pair contributes two columns).
      Matrix basis(n2, n);
      int col = 0;
      std::vector<char> done(n2, 0);
      for (int idx : subset) {
        if (done[idx]) continue;
        if (partner[idx] < 0) {
          basis.col(col++) = vecs.col(idx).real();
          done[idx] = 1;
        } else {
          basis.col(col++) = vecs.col(idx).real();
          basis.col(col++) = vecs.col(idx).imag();
          done[idx] = 1;
          done[partner[idx]] = 1;
        }
      }
      accept_real_basis(p, basis.topRows(n), basis.bottomRows(n), cond_limit, set);
    } else {
      CMatrix basis(n2, n);
      for (int c = 0; c < static_cast<int>(n); ++c) basis.col(c) = vecs.col(subset[c]);
      accept_complex_basis(p, basis.topRows(n), basis.bottomRows(n), cond_limit, set);
    }
  });
  return set;
}

}  // namespace secgain

#include "design_common.hpp"

#include <sstream>
#include <utility>

namespace secgain::detail {

CovarianceVars add_covariance_vars(sdp::SdpProblem& prob, const LtiSystem& sys) {
  CovarianceVars v;
  v.q1 = prob.add_symmetric_var("Q1", sys.n);
  v.px = prob.add_symmetric_var("Px", sys.n);
  v.x = prob.add_matrix_var("X", sys.n, sys.p);
  v.y = prob.add_matrix_var("Y", sys.m, sys.n);
  v.z = prob.add_matrix_var("Z", sys.n, sys.n);
  return v;
}

sdp::MatExpr covariance_lmi_expr(sdp::SdpProblem& prob, const LtiSystem& sys,
                                 const CovarianceVars& v) {
  const int n = sys.n;
  const Matrix id = Matrix::Identity(n, n);

  auto blocks = sdp::BlockExpr::make_symmetric({n, n, n, n, n, sys.p});
  blocks.set(0, 0, prob.var(v.q1));
  blocks.set(0, 1, sdp::MatExpr::constant(id));
  blocks.set(0, 2, prob.var(v.q1) * sys.f + prob.var(v.x) * sys.c);
  blocks.set(0, 3, prob.var(v.z));
  blocks.set(0, 4, prob.var(v.q1) * sys.r1);
  blocks.set(0, 5, prob.var(v.x) * sys.r2);
  blocks.set(1, 1, prob.var(v.px));
  blocks.set(1, 2, sdp::MatExpr::constant(sys.f));
  blocks.set(1, 3, sys.f * prob.var(v.px) + sys.g * prob.var(v.y));
  blocks.set(1, 4, sdp::MatExpr::constant(sys.r1));
  blocks.set(2, 2, prob.var(v.q1));
  blocks.set(2, 3, sdp::MatExpr::constant(id));
  blocks.set(3, 3, prob.var(v.px));
  blocks.set(4, 4, sdp::MatExpr::constant(sys.r1));
  blocks.set(5, 5, sdp::MatExpr::constant(sys.r2));
  return blocks.assemble();
}

void add_covariance_lmi(sdp::SdpProblem& prob, const LtiSystem& sys, const CovarianceVars& v) {
  prob.add_psd_block(covariance_lmi_expr(prob, sys, v));
}

void add_cost_ceiling(sdp::SdpProblem& prob, const LtiSystem& sys, sdp::VarHandle px,
                      double gamma_bar) {
  sdp::LinExpr e = prob.trace_of(sym(sys.c.transpose() * sys.c), px);
  e.constant += sys.r2.trace() - gamma_bar * gamma_bar * (sys.r1.trace() + sys.r2.trace());
  prob.add_linear_leq(e);
}

void add_cost_ceiling_var(sdp::SdpProblem& prob, const LtiSystem& sys, sdp::VarHandle px,
                          sdp::VarHandle gamma_bar_sq) {
  sdp::LinExpr e = prob.trace_of(sym(sys.c.transpose() * sys.c), px);
  e.constant += sys.r2.trace();
  e += -(sys.r1.trace() + sys.r2.trace()) * prob.scalar(gamma_bar_sq);
  prob.add_linear_leq(e);
}

sdp::MatExpr scaled_by(const sdp::SdpProblem& prob, sdp::VarHandle scalar, const Matrix& m) {
  auto e = sdp::MatExpr::zero(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int j = 0; j < m.cols(); ++j) {
    Matrix basis = Matrix::Zero(1, m.cols());
    basis(0, j) = 1.0;
    e += Matrix(m.col(j)) * prob.var(scalar) * basis;
  }
  return e;
}

RecoveryResult recover_gains(const LtiSystem& sys, const Matrix& q1, const Matrix& px,
                             const Matrix& x, const Matrix& y, const Matrix& z,
                             double cond_limit) {
  const int n = sys.n;
  const Matrix id = Matrix::Identity(n, n);

  const Matrix s = id - q1 * px;
  const double s_cond = cond2(s);
  if (!(s_cond < cond_limit)) {
    std::ostringstream os;
    os << "gain recovery: coupling factor I - Q1 Px is numerically singular (condition "
       << s_cond << "); the program optimum has no well-posed coupling factor";
    throw NumericalError(os.str());
  }
  const Matrix s_inv_t = s.transpose().partialPivLu().solve(id).transpose();

  QuadraticMatrixProblem qp;
  qp.gamma1 = sys.g * y * s_inv_t;
  qp.gamma2 = sys.f;
  qp.gamma3 = (q1 * sys.g * y + x * sys.c * px + q1 * sys.f * px - z) * s_inv_t;
  qp.gamma4 = -x * sys.c;

  RecoveryResult out;
  out.factorization = solve_quadratic_matrix_eq(qp);
  for (std::size_t i = 0; i < out.factorization.solutions.size(); ++i) {
    const Matrix& q12 = out.factorization.solutions[i];
    if (!(cond2(q12) < cond_limit)) continue;
    GainCandidate cand;
    cand.q12 = q12;
    cand.residual = out.factorization.residuals[i];
    cand.gains.l = q12.partialPivLu().solve(x);
    cand.p_xxhat = q12.transpose().partialPivLu().solve((id - px * q1).transpose()).transpose();
    if (!(cond2(cand.p_xxhat) < cond_limit)) continue;
    cand.gains.k = cand.p_xxhat.transpose().partialPivLu().solve(y.transpose()).transpose();
    cand.rho_controller = spectral_radius(sys.f + sys.g * cand.gains.k);
    cand.rho_estimator = spectral_radius(sys.f - cand.gains.l * sys.c);
    cand.stable = cand.rho_controller < 1.0 && cand.rho_estimator < 1.0;
    out.candidates.push_back(std::move(cand));
  }
  return out;
}

}  // namespace secgain::detail

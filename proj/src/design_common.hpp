#pragma once

#include <vector>

#include "secgain/linalg.hpp"
#include "secgain/model.hpp"
#include "secgain/numerics.hpp"
#include "secgain/sdp.hpp"

// Pieces shared by the covariance-optimal design and the co-design engines:
// the attack-free covariance LMI, the output-cost ceiling, and the recovery
// of (K, L) from a covariance-program solution.
namespace secgain::detail {

struct CovarianceVars {
  sdp::VarHandle q1;  // inverse x-block of the stacked inverse covariance
  sdp::VarHandle px;  // state covariance
  sdp::VarHandle x;   // carries the observer gain (Q12 L)
  sdp::VarHandle y;   // carries the controller gain (K P_xxhat^T)
  sdp::VarHandle z;   // free coupling block
};

CovarianceVars add_covariance_vars(sdp::SdpProblem& prob, const LtiSystem& sys);

// The closed-loop covariance LMI in the variables above, as an expression so
// certificate re-checks can evaluate it at a solved point.
sdp::MatExpr covariance_lmi_expr(sdp::SdpProblem& prob, const LtiSystem& sys,
                                 const CovarianceVars& v);

// Adds the closed-loop covariance LMI in the variables above.
void add_covariance_lmi(sdp::SdpProblem& prob, const LtiSystem& sys, const CovarianceVars& v);

// Adds tr(C^T C Px) + tr R2 - gamma_bar^2 (tr R1 + tr R2) <= 0.
void add_cost_ceiling(sdp::SdpProblem& prob, const LtiSystem& sys, sdp::VarHandle px,
                      double gamma_bar);
// Same ceiling with gamma_bar^2 as a decision variable.
void add_cost_ceiling_var(sdp::SdpProblem& prob, const LtiSystem& sys, sdp::VarHandle px,
                          sdp::VarHandle gamma_bar_sq);

// Affine expression for (scalar variable) * m.
sdp::MatExpr scaled_by(const sdp::SdpProblem& prob, sdp::VarHandle scalar, const Matrix& m);

struct GainCandidate {
  GainPair gains;
  Matrix q12;
  Matrix p_xxhat;
  double residual = 0.0;
  double rho_controller = 0.0;
  double rho_estimator = 0.0;
  bool stable = false;
};

struct RecoveryResult {
  std::vector<GainCandidate> candidates;
  RiccatiSolutionSet factorization;
};

// Reads (K, L) back out of a covariance-program solution through the
// coupling-factor quadratic. Throws NumericalError when the factor
// I - Q1 Px is numerically singular.
RecoveryResult recover_gains(const LtiSystem& sys, const Matrix& q1, const Matrix& px,
                             const Matrix& x, const Matrix& y, const Matrix& z,
                             double cond_limit);

}  // namespace secgain::detail

#pragma once

#include "secgain/linalg.hpp"

namespace secgain {

// Discrete-time plant
//   x_{k+1} = F x_k + G u_k + nu_k,   y_k = C x_k + eta_k
// with nu ~ N(0, R1), eta ~ N(0, R2). Construction validates dimensions,
// noise covariances (symmetric positive definite), open-loop Schur stability
// of F, and PBH detectability/stabilizability.
struct LtiSystem {
  Matrix f;
  Matrix g;
  Matrix c;
  Matrix r1;
  Matrix r2;
  int n = 0;  // states
  int m = 0;  // inputs
  int p = 0;  // outputs

  LtiSystem(Matrix f_in, Matrix g_in, Matrix c_in, Matrix r1_in, Matrix r2_in);
};

// Controller/observer pair: u = K xhat, xhat update gain L.
struct GainPair {
  Matrix k;  // m x n
  Matrix l;  // n x p
};

// Chi-squared residual detector: alarm when r' Sigma^-1 r > alpha.
struct DetectorConfig {
  double false_alarm_rate = 0.0;
  int dof = 0;
  double alpha = 0.0;
};

DetectorConfig make_detector(double false_alarm_rate, int dof);

// Probabilistic truncation levels for noise/estimation-error ellipsoids:
// quantiles of chi-squared at the given coverage, dof n, n, p respectively.
struct TruncationConfig {
  double p_nu = 0.95;
  double p_e = 0.95;
  double p_eta = 0.95;
  double nu_bar = 0.0;
  double e_bar = 0.0;
  double eta_bar = 0.0;
};

TruncationConfig make_truncation(const LtiSystem& sys, double p_nu = 0.95, double p_e = 0.95,
                                 double p_eta = 0.95);

// Closed loop stacked over [x; xhat; e] under sensor falsification that
// pins the reported residual, with inputs [nu; phi]. The (x, xhat) sub-blocks
// give the nominal loop driven by [nu; eta].
struct StackedSystem {
  Matrix a;         // 3n x 3n
  Matrix b;         // 3n x (n + p)
  Matrix a_hat;     // 2n x 2n, leading sub-block of a
  Matrix b_hat;     // 2n x (n + p)
  Matrix e_x;       // n x 3n selector onto x
  Matrix e_xxhat;   // 2n x 3n selector onto (x, xhat)
  Matrix e_hat_x;   // n x 2n selector onto x within (x, xhat)
};

StackedSystem build_stacked(const LtiSystem& sys, const GainPair& gains);

// Steady-state estimation error covariance P_e of xhat under gain L and the
// induced residual covariance Sigma = C P_e C' + R2.
struct ResidualCovariance {
  Matrix p_e;
  Matrix sigma;
};

ResidualCovariance residual_covariance(const LtiSystem& sys, const Matrix& l);

// Centered ellipsoid { z : z' Q^-1 z <= 1 } described by its shape matrix.
struct Ellipsoid {
  Matrix q;

  double quad_form(const Vector& z) const;
  bool contains(const Vector& z, double tol = 0.0) const;
};

// PBH rank tests over eigenvalues on or outside the unit circle.
bool is_detectable(const Matrix& f, const Matrix& c);
bool is_stabilizable(const Matrix& f, const Matrix& g);

}  // namespace secgain

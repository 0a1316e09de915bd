#pragma once

#include <vector>

#include "secgain/model.hpp"

namespace secgain {

struct ReachOptions {
  std::vector<double> a_grid;  // contraction rates to scan; empty means 0.01..0.99 step 0.01
};

// Outer ellipsoidal bound on the states reachable under falsified measurements
// that never trip the detector, with truncated process noise.
struct ReachBound {
  Matrix q;               // certificate shape for the stacked state, 3n x 3n
  Ellipsoid state_bound;  // plant-state projection, unit level set
  double a = 0.0;         // winning contraction rate
  double a1 = 0.0;        // budget split: process noise share
  double a2 = 0.0;        // budget split: injected residual share
  double objective = 0.0; // trace of the plant-state block
  std::vector<double> feasible_a;
};

std::vector<double> default_contraction_grid();

// Block-diagonal disturbance weight: process noise at coverage nu_bar against
// R1, injected residuals held below the alarm threshold against Sigma.
Matrix disturbance_shape(const Matrix& r1, const Matrix& sigma, double alpha, double nu_bar,
                         double a1, double a2);

// Contraction certificate matrix; positive semidefiniteness at a candidate Q
// re-verifies the reachable-set bound independently of the solver.
Matrix contraction_certificate(const Matrix& a_mat, const Matrix& b_mat, const Matrix& w,
                               const Matrix& q, double a);

ReachBound bound_reachable_set(const LtiSystem& sys, const GainPair& gains,
                               const DetectorConfig& detector,
                               const TruncationConfig& truncation,
                               const ReachOptions& options = {});

// Points on the boundary of a two-dimensional ellipsoid, for plots and sweeps.
Matrix ellipsoid_boundary_points(const Ellipsoid& e, int count);

}  // namespace secgain

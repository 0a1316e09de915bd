#pragma once

#include <optional>
#include <vector>

#include "secgain/model.hpp"
#include "secgain/numerics.hpp"
#include "secgain/sdp.hpp"

namespace secgain {

// Output-cost ratio of a closed loop against the raw noise floor:
//   gamma = sqrt((tr(C P_x C') + tr R2) / (tr R1 + tr R2))
// with P_x the stationary plant-state covariance under the given gains.
struct GammaEval {
  bool stable = false;
  double gamma = std::numeric_limits<double>::quiet_NaN();
  Matrix p_x;  // empty when the loop is unstable
};

GammaEval evaluate_gamma(const LtiSystem& sys, const GainPair& gains);

// Cost ratio with the input held at zero (covariance from the open-loop
// Lyapunov equation).
double open_loop_gamma(const LtiSystem& sys);

struct H2Options {
  sdp::SolveOptions solve;
  // Conditioning guard on I - Q1 P_x before gain recovery.
  double cond_limit = 1e12;
  // When set, candidate gain pairs are ranked by the reachable-set trace they
  // certify under this detector; otherwise by nominal spectral radius.
  std::optional<DetectorConfig> rank_detector;
  std::optional<TruncationConfig> rank_truncation;
};

// One recovered observer/controller pair from a factorization branch.
struct H2Candidate {
  GainPair gains;
  Matrix q12;             // coupling factor used for the recovery
  double residual = 0.0;  // quadratic-equation residual of q12
  double rho_controller = 0.0;
  double rho_estimator = 0.0;
  bool stable = false;
  double rank_score = 0.0;
};

struct H2Design {
  GainPair gains;  // selected candidate
  double gamma = 0.0;
  Matrix p_x;           // plant-state covariance at the program optimum
  Matrix q1;            // leading block of the stacked inverse covariance
  Matrix p_xxhat;       // recovered state/estimate cross covariance
  Matrix p_x_check;     // covariance recomputed from the selected gains
  double mae_lyapunov = 0.0;  // mean absolute gap between p_x and p_x_check
  std::vector<H2Candidate> candidates;
  int selected = -1;  // index into candidates
  RiccatiSolutionSet factorization;
  int sdp_iterations = 0;
};

// Jointly optimal observer and state-feedback gains for the stationary
// output-cost ratio, via a linearizing change of variables: one semidefinite
// program in (Q1, P_x, X, Y, Z), then recovery of the coupling factor Q12
// from a quadratic matrix equation and of (L, K) from the factorization.
H2Design optimal_occ_h2(const LtiSystem& sys, const H2Options& options = {});

}  // namespace secgain

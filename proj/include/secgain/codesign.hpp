#pragma once

#include <string>
#include <vector>

#include "secgain/analysis.hpp"
#include "secgain/h2design.hpp"
#include "secgain/model.hpp"
#include "secgain/sdp.hpp"

namespace secgain {

// Joint tuning of (K, L) against a ceiling gamma_bar on the nominal output
// cost: minimize the magnification factor sigma that scales the certified
// reachable ellipsoid of the attacked loop, so performance is traded for
// security explicitly.
struct CodesignConfig {
  double epsilon_l = 0.03;         // Frobenius threshold for observer-gain convergence
  double sigma_min = 0.1;          // magnification bracket
  double sigma_max = 1e6;
  double sigma_bisect_tol = 0.01;  // relative bracket width that stops the bisection
  double gamma_step = 0.1;         // ceiling ramp increment for the iterative engine
  std::vector<double> a_grid;      // contraction rates; empty selects the default
  std::vector<double> a2_grid;     // residual budget shares (convex engine); empty default
  int max_inner_iters = 25;        // cap on observer-gain fixed-point sweeps
  sdp::SolveOptions solve;
};

enum class DesignMethod { kIterative, kConvex };

const char* to_string(DesignMethod m);

// One SDP probe inside a design run.
struct ProbeLog {
  double gamma_bar = 0.0;
  double sigma = 0.0;
  double a = 0.0;
  double a2 = 0.0;  // grid value for the convex engine, recovered split otherwise
  int inner_iters = 0;
  double l_delta = 0.0;  // last observer-gain step (iterative engine)
  bool feasible = false;
  std::string note;
};

// Decision-variable values at the accepted solve, kept so the semidefinite
// certificates can be rebuilt and re-checked after the fact.
struct SolutionBlocks {
  double a = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  Matrix p_x;        // plant-state covariance block
  Matrix q1;         // leading block of the stacked inverse covariance
  Matrix x;          // observer-gain carrier
  Matrix y;          // controller-gain carrier
  Matrix z;          // free coupling block
  Matrix p3;         // third ellipsoid block (iterative engine)
  Matrix pi;         // residual shape variable (convex engine)
  Matrix l_fixed;    // observer gain the accepted solve was linearized at
  Matrix sigma_res;  // residual covariance used by that solve
};

struct CodesignResult {
  DesignMethod method = DesignMethod::kIterative;
  GainPair gains;
  double sigma = 0.0;      // smallest feasible magnification found
  double gamma_bar = 0.0;  // requested ceiling
  double gamma = 0.0;      // achieved cost ratio at the returned gains
  ReachBound bound;        // closed-form reachable bound at the returned gains
  Matrix ellipsoid_x;      // plant-state block of the design certificate, sigma * P_x
  double mae_lyapunov = 0.0;  // mean |P_x - closed-loop recomputation|
  SolutionBlocks blocks;
  std::vector<ProbeLog> diagnostics;
  std::vector<double> warm_start_path;  // intermediate ceilings visited
  int total_solves = 0;
};

// Smallest eigenvalues of the certificate blocks rebuilt at the returned
// values; all should clear -10x the solver feasibility tolerance. s_l/x_l
// exist only for convex designs and are NaN otherwise.
struct CertificateCheck {
  double h_l_min_eig = 0.0;  // security LMI
  double c_l_min_eig = 0.0;  // covariance LMI
  double s_l_min_eig = 0.0;  // error-covariance LMI
  double x_l_min_eig = 0.0;  // residual-shape coupling LMI
  double c_h_value = 0.0;    // cost ceiling slack, satisfied when <= 0
};

CertificateCheck verify_certificates(const LtiSystem& sys, const DetectorConfig& detector,
                                     const TruncationConfig& trunc,
                                     const CodesignResult& result);

// Alternating design: for a fixed observer gain the security certificate is
// linear, so sweep (solve, re-extract gains, refresh the residual shape) to a
// fixed point, and bisect the magnification outside that loop. The ceiling is
// approached in gamma_step increments from the unconstrained optimum, each
// step warm-starting the next.
CodesignResult design_iterative(const LtiSystem& sys, double gamma_bar,
                                const DetectorConfig& detector, const TruncationConfig& trunc,
                                const CodesignConfig& config = {});

// One-shot convex design on the solution manifold where the error covariance
// matches the inverse of the leading block: the observer product folds into
// the carrier variable, the residual shape becomes a decision variable, and
// only (a, a2) stay gridded.
CodesignResult design_convex(const LtiSystem& sys, double gamma_bar,
                             const DetectorConfig& detector, const TruncationConfig& trunc,
                             const CodesignConfig& config = {});

// Smallest ceiling the manifold relaxation admits at a fixed, large
// magnification, plus the cost ratio actually delivered by the gains that
// attain it.
struct ManifoldInfimum {
  double gamma_bar_c = 0.0;
  double gamma_c = 0.0;
  GainPair gains;
  double sigma_fixed = 0.0;
  double a = 0.0;   // winning grid cell
  double a2 = 0.0;
  std::vector<ProbeLog> diagnostics;
};

ManifoldInfimum infimum_gamma_on_manifold(const LtiSystem& sys, const DetectorConfig& detector,
                                          const TruncationConfig& trunc,
                                          double sigma_fixed = 1e5,
                                          const CodesignConfig& config = {});

struct TradeoffPoint {
  double gamma_bar = 0.0;
  double gamma = 0.0;               // NaN when the design failed at this ceiling
  double security_objective = 0.0;  // reachable-bound trace at the returned gains
  bool feasible = false;
};

// Runs the chosen engine at each ceiling in ascending order, warm-starting
// from the previous point. Failures become gaps, not errors.
std::vector<TradeoffPoint> tradeoff_curve(const LtiSystem& sys, const DetectorConfig& detector,
                                          const TruncationConfig& trunc,
                                          const std::vector<double>& gamma_bar_list,
                                          DesignMethod method,
                                          const CodesignConfig& config = {});

}  // namespace secgain

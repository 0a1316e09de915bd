#include "secgain/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "secgain/numerics.hpp"

namespace secgain {

namespace {

// Optimal certificate at one contraction rate. The block LMI
//   [[aQ, QA', 0], [AQ, Q, B], [0, B', (1-a)/(2-a) W]] >= 0
// reduces by two Schur complements to Q >= (1/a) A Q A' + B Whati B', whose
// feasible set has a least element: the fixed point of that monotone
// contractive map. Every feasible Q dominates it, so it also minimises the
// plant-block trace. With the inverse weight linear in 1/(1-a1) and 1/(1-a2),
// the fixed point splits into two Lyapunov solutions and the budget split
// reduces to a one-dimensional convex problem with a closed-form minimiser.
struct RatePoint {
  bool feasible = false;
  double objective = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  Matrix q;
};

RatePoint solve_rate(const StackedSystem& st, int n, const Matrix& g_nu, const Matrix& g_phi,
                     double nu_bar, double alpha, double a) {
  RatePoint out;
  const Matrix as = st.a / std::sqrt(a);
  if (spectral_radius(as) >= 1.0 - 1e-12) return out;

  const Matrix p_nu = dlyap(as, g_nu);
  const Matrix p_phi = dlyap(as, g_phi);
  const double wf_inv = (2.0 - a) / (1.0 - a);
  const double d1 = nu_bar * wf_inv * p_nu.topLeftCorner(n, n).trace();
  const double d2 = alpha * wf_inv * p_phi.topLeftCorner(n, n).trace();

  // minimise d1/u + d2/v with u + v = 2 - a and u, v in [1-a, 1]
  double u = 1.0;
  if (d2 > 0.0 && d1 > 0.0) {
    u = (2.0 - a) * std::sqrt(d1) / (std::sqrt(d1) + std::sqrt(d2));
  } else if (d1 <= 0.0 && d2 > 0.0) {
    u = 1.0 - a;
  }
  u = std::clamp(u, 1.0 - a, 1.0);
  const double v = 2.0 - a - u;

  out.feasible = true;
  out.q = sym(wf_inv * (nu_bar / u * p_nu + alpha / v * p_phi));
  out.objective = out.q.topLeftCorner(n, n).trace();
  out.a1 = 1.0 - u;
  out.a2 = 1.0 - v;
  return out;
}

}  // namespace

std::vector<double> default_contraction_grid() {
  std::vector<double> grid;
  grid.reserve(99);
  for (int i = 1; i <= 99; ++i) grid.push_back(i / 100.0);
  return grid;
}

Matrix disturbance_shape(const Matrix& r1, const Matrix& sigma, double alpha, double nu_bar,
                         double a1, double a2) {
  if (alpha <= 0.0 || nu_bar <= 0.0) {
    throw ArgumentError("disturbance_shape: alpha and nu_bar must be positive");
  }
  const Eigen::Index n = r1.rows();
  const Eigen::Index p = sigma.rows();
  Matrix w = Matrix::Zero(n + p, n + p);
  w.topLeftCorner(n, n) = (1.0 - a1) / nu_bar * inverse_spd(r1);
  w.bottomRightCorner(p, p) = (1.0 - a2) / alpha * inverse_spd(sigma);
  return w;
}

Matrix contraction_certificate(const Matrix& a_mat, const Matrix& b_mat, const Matrix& w,
                               const Matrix& q, double a) {
  const Eigen::Index n = a_mat.rows();
  const Eigen::Index d = b_mat.cols();
  if (a_mat.cols() != n || b_mat.rows() != n || q.rows() != n || q.cols() != n ||
      w.rows() != d || w.cols() != d) {
    throw ArgumentError("contraction_certificate: inconsistent block dimensions");
  }
  if (!(a > 0.0 && a < 1.0)) {
    throw ArgumentError("contraction_certificate: contraction rate must lie in (0, 1)");
  }
  Matrix m = Matrix::Zero(2 * n + d, 2 * n + d);
  m.topLeftCorner(n, n) = a * q;
  m.block(0, n, n, n) = q * a_mat.transpose();
  m.block(n, 0, n, n) = a_mat * q;
  m.block(n, n, n, n) = q;
  m.block(n, 2 * n, n, d) = b_mat;
  m.block(2 * n, n, d, n) = b_mat.transpose();
  m.bottomRightCorner(d, d) = (1.0 - a) / (2.0 - a) * w;
  return m;
}

ReachBound bound_reachable_set(const LtiSystem& sys, const GainPair& gains,
                               const DetectorConfig& detector,
                               const TruncationConfig& truncation,
                               const ReachOptions& options) {
  if (detector.dof != sys.p) {
    std::ostringstream os;
    os << "bound_reachable_set: detector dof " << detector.dof << " does not match output "
       << "dimension " << sys.p;
    throw ArgumentError(os.str());
  }
  const StackedSystem st = build_stacked(sys, gains);
  const double rho = spectral_radius(st.a);
  if (rho >= 1.0) {
    std::ostringstream os;
    os << "bound_reachable_set: closed loop is unstable (spectral radius " << rho
       << ", controller loop " << spectral_radius(sys.f + sys.g * gains.k) << ", estimator loop "
       << spectral_radius(sys.f - gains.l * sys.c) << ")";
    throw UnstableError(os.str());
  }
  const ResidualCovariance rc = residual_covariance(sys, gains.l);
  const Matrix g_nu = sym(st.b.leftCols(sys.n) * sys.r1 * st.b.leftCols(sys.n).transpose());
  const Matrix g_phi = sym(st.b.rightCols(sys.p) * rc.sigma * st.b.rightCols(sys.p).transpose());

  std::vector<double> grid = options.a_grid.empty() ? default_contraction_grid() : options.a_grid;
  for (double a : grid) {
    if (!(a > 0.0 && a < 1.0)) {
      throw ArgumentError("bound_reachable_set: contraction rates must lie in (0, 1)");
    }
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  ReachBound best;
  bool have_best = false;
  for (double a : grid) {
    const RatePoint point =
        solve_rate(st, sys.n, g_nu, g_phi, truncation.nu_bar, detector.alpha, a);
    if (!point.feasible) continue;
    best.feasible_a.push_back(a);
    const double margin = 1e-12 * (1.0 + std::abs(best.objective));
    if (!have_best || point.objective < best.objective - margin) {
      have_best = true;
      best.q = point.q;
      best.state_bound.q = point.q.topLeftCorner(sys.n, sys.n);
      best.a = a;
      best.a1 = point.a1;
      best.a2 = point.a2;
      best.objective = point.objective;
    }
  }
  if (!have_best) {
    std::ostringstream os;
    os << "bound_reachable_set: no contraction rate in [" << grid.front() << ", " << grid.back()
       << "] (" << grid.size() << " points) admits a certificate; closed-loop spectral radius is "
       << rho << ", so only rates above " << rho * rho << " can work";
    throw InfeasibleError(os.str());
  }
  return best;
}

Matrix ellipsoid_boundary_points(const Ellipsoid& e, int count) {
  if (e.q.rows() != 2 || e.q.cols() != 2) {
    throw ArgumentError("ellipsoid_boundary_points: only two-dimensional shapes are supported");
  }
  if (count < 1) throw ArgumentError("ellipsoid_boundary_points: count must be positive");
  const Matrix half = sqrt_psd(sym(e.q));
  Matrix pts(2, count);
  for (int j = 0; j < count; ++j) {
    const double theta = 2.0 * M_PI * j / count;
    Vector d(2);
    d << std::cos(theta), std::sin(theta);
    pts.col(j) = half * d;
  }
  return pts;
}

}  // namespace secgain

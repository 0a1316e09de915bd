#include "secgain/codesign.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <utility>

#include "design_common.hpp"
#include "secgain/errors.hpp"

namespace secgain {
namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
// Relative bracket width for the ceiling-ramp stages; only the target ceiling
// gets the configured bisection tolerance.
constexpr double kRampBisectTol = 0.35;
constexpr double kCondLimit = 1e12;

std::vector<double> default_a_grid() { return {0.90, 0.92, 0.94, 0.96}; }

std::vector<double> default_a2_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 9; ++i) g.push_back(0.1 * i);
  return g;
}

void validate_config(const CodesignConfig& c) {
  if (!(c.epsilon_l > 0.0) || !(c.sigma_min > 0.0) || !(c.sigma_max > c.sigma_min) ||
      !(c.sigma_bisect_tol > 0.0) || !(c.gamma_step > 0.0) || c.max_inner_iters < 1) {
    throw ArgumentError(
        "codesign configuration: thresholds and step sizes must be positive and "
        "sigma_min < sigma_max");
  }
  auto check_grid = [](const std::vector<double>& g, const char* name) {
    for (double v : g) {
      if (!(v > 0.0) || !(v < 1.0)) {
        std::ostringstream os;
        os << "codesign configuration: " << name << " values must lie in (0, 1), got " << v;
        throw ArgumentError(os.str());
      }
    }
  };
  check_grid(c.a_grid, "a_grid");
  check_grid(c.a2_grid, "a2_grid");
}

double min_eig(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym(m));
  return es.eigenvalues().minCoeff();
}

// Evaluates an affine matrix expression at concrete variable values, indexed
// by variable id. Used to rebuild certificates at a solved point.
Matrix eval_expr(const sdp::MatExpr& e, const std::vector<Matrix>& vals) {
  Matrix out = e.constant_part();
  for (const sdp::MatTerm& t : e.terms()) {
    Matrix v = vals.at(static_cast<std::size_t>(t.var));
    if (t.transposed) v = v.transpose().eval();
    out += t.coeff * t.pre * v * t.post;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Program assembly. The security LMI mixes sigma-scaled covariances with
// their inverses, so both engines build it under a sqrt(sigma) row scaling
// that keeps block magnitudes within a few orders of each other.

struct FixedObserverProgram {
  detail::CovarianceVars cov;
  sdp::VarHandle a1;
  sdp::VarHandle a2;
  sdp::VarHandle p3;
  sdp::MatExpr security;
};

FixedObserverProgram fixed_observer_exprs(sdp::SdpProblem& prob, const LtiSystem& sys,
                                          double sigma, const Matrix& l_fixed,
                                          const Matrix& sigma_res, double nu_bar, double alpha,
                                          double a) {
  const int n = sys.n;
  const int p = sys.p;
  const Matrix id = Matrix::Identity(n, n);

  FixedObserverProgram pr;
  pr.a1 = prob.add_scalar_var("a1", 0.0, 1.0);
  pr.a2 = prob.add_scalar_var("a2", 0.0, 1.0);
  pr.cov = detail::add_covariance_vars(prob, sys);
  pr.p3 = prob.add_symmetric_var("P3", n);
  const detail::CovarianceVars& v = pr.cov;

  const double wf = (1.0 - a) / (2.0 - a);
  const Matrix nu_shape = wf / nu_bar * inverse_spd(sys.r1);
  const Matrix pi_shape = wf / alpha * inverse_spd(sigma_res);
  const double rs = std::sqrt(sigma);
  const double cs = sigma / (rs * rs);

  auto h = sdp::BlockExpr::make_symmetric({n, n, n, n, n, n, n, p});
  h.set(0, 0, a * cs * prob.var(v.px));
  h.set(0, 1, sdp::MatExpr::constant(a * id));
  h.set(1, 1, (a / cs) * prob.var(v.q1));
  h.set(2, 2, a * prob.var(pr.p3));
  h.set(0, 3, (cs * (sys.f * prob.var(v.px) + sys.g * prob.var(v.y))).transpose());
  h.set(1, 3, sdp::MatExpr::constant(sys.f.transpose()));
  h.set(0, 4, prob.var_t(v.z));
  h.set(1, 4, ((1.0 / cs) * (prob.var(v.q1) * sys.f + prob.var(v.x) * sys.c)).transpose());
  h.set(2, 4, ((-1.0 / (cs * rs)) * prob.var(v.x) * sys.c).transpose());
  h.set(2, 5, (prob.var(pr.p3) * sys.f).transpose());
  h.set(3, 3, cs * prob.var(v.px));
  h.set(3, 4, sdp::MatExpr::constant(id));
  h.set(4, 4, (1.0 / cs) * prob.var(v.q1));
  h.set(5, 5, prob.var(pr.p3));
  h.set(3, 6, sdp::MatExpr::constant((1.0 / rs) * id));
  h.set(4, 6, (1.0 / (cs * rs)) * prob.var(v.q1));
  h.set(4, 7, (1.0 / (cs * rs)) * prob.var(v.x));
  h.set(5, 6, prob.var(pr.p3));
  h.set(5, 7, prob.var(pr.p3) * (-l_fixed));
  h.set(6, 6, sdp::MatExpr::constant(nu_shape) - detail::scaled_by(prob, pr.a1, nu_shape));
  h.set(7, 7, sdp::MatExpr::constant(pi_shape) - detail::scaled_by(prob, pr.a2, pi_shape));
  pr.security = h.assemble();
  return pr;
}

struct ManifoldProgram {
  detail::CovarianceVars cov;
  sdp::VarHandle a1;
  sdp::VarHandle pi;
  sdp::MatExpr security;
  sdp::MatExpr err_cov;    // estimation-error covariance certificate
  sdp::MatExpr res_shape;  // residual-shape coupling certificate
};

ManifoldProgram manifold_exprs(sdp::SdpProblem& prob, const LtiSystem& sys, double sigma,
                               double a, double a2, const DetectorConfig& detector,
                               const TruncationConfig& trunc) {
  const int n = sys.n;
  const int p = sys.p;
  const Matrix id = Matrix::Identity(n, n);

  ManifoldProgram pr;
  // The budget split must still cover the contraction rate.
  pr.a1 = prob.add_scalar_var("a1", std::max(0.0, a - a2), 1.0);
  pr.cov = detail::add_covariance_vars(prob, sys);
  pr.pi = prob.add_symmetric_var("Pi", p);
  const detail::CovarianceVars& v = pr.cov;

  const double wf = (1.0 - a) / (2.0 - a);
  const Matrix nu_shape = wf / trunc.nu_bar * inverse_spd(sys.r1);
  const double rs = std::sqrt(sigma);
  const double cs = sigma / (rs * rs);

  // On the solution manifold the third ellipsoid block is the inverse error
  // covariance itself, and the observer product folds into the carrier X.
  auto h = sdp::BlockExpr::make_symmetric({n, n, n, n, n, n, n, p});
  h.set(0, 0, a * cs * prob.var(v.px));
  h.set(0, 1, sdp::MatExpr::constant(a * id));
  h.set(1, 1, (a / cs) * prob.var(v.q1));
  h.set(2, 2, (a / sigma) * prob.var(v.q1));
  h.set(0, 3, (cs * (sys.f * prob.var(v.px) + sys.g * prob.var(v.y))).transpose());
  h.set(1, 3, sdp::MatExpr::constant(sys.f.transpose()));
  h.set(0, 4, prob.var_t(v.z));
  h.set(1, 4, ((1.0 / cs) * (prob.var(v.q1) * sys.f + prob.var(v.x) * sys.c)).transpose());
  h.set(2, 4, ((-1.0 / (cs * rs)) * prob.var(v.x) * sys.c).transpose());
  h.set(2, 5, ((1.0 / sigma) * prob.var(v.q1) * sys.f).transpose());
  h.set(3, 3, cs * prob.var(v.px));
  h.set(3, 4, sdp::MatExpr::constant(id));
  h.set(4, 4, (1.0 / cs) * prob.var(v.q1));
  h.set(5, 5, (1.0 / sigma) * prob.var(v.q1));
  h.set(3, 6, sdp::MatExpr::constant((1.0 / rs) * id));
  h.set(4, 6, (1.0 / (cs * rs)) * prob.var(v.q1));
  h.set(4, 7, (1.0 / (cs * rs)) * prob.var(v.x));
  h.set(5, 6, (1.0 / sigma) * prob.var(v.q1));
  h.set(5, 7, (1.0 / sigma) * prob.var(v.x));
  h.set(6, 6, sdp::MatExpr::constant(nu_shape) - detail::scaled_by(prob, pr.a1, nu_shape));
  h.set(7, 7, (wf * (1.0 - a2)) * prob.var(pr.pi));
  pr.security = h.assemble();

  // Estimation-error covariance in inverse form: feasibility of Q1 as an
  // inverse error covariance for the observer carried by X.
  auto s = sdp::BlockExpr::make_symmetric({n, n, n, p});
  s.set(0, 0, prob.var(v.q1));
  s.set(0, 1, prob.var(v.q1) * sys.f + prob.var(v.x) * sys.c);
  s.set(0, 2, prob.var(v.q1) * sys.r1);
  s.set(0, 3, prob.var(v.x) * sys.r2);
  s.set(1, 1, prob.var(v.q1));
  s.set(2, 2, sdp::MatExpr::constant(sys.r1));
  s.set(3, 3, sdp::MatExpr::constant(sys.r2));
  pr.err_cov = s.assemble();

  // Couples the residual shape variable to the error and measurement-noise
  // ellipsoids so that held-below-threshold residuals stay consistent.
  const double kappa = trunc.e_bar + trunc.eta_bar;
  const Matrix ct = sys.c.transpose();
  auto xl = sdp::BlockExpr::make_symmetric({n, p});
  xl.set(0, 0, prob.var(v.q1) - kappa * (ct * prob.var(pr.pi) * sys.c));
  xl.set(0, 1, (-kappa) * (ct * prob.var(pr.pi)));
  xl.set(1, 1, sdp::MatExpr::constant(inverse_spd(sys.r2)) - kappa * prob.var(pr.pi));
  pr.res_shape = xl.assemble();
  (void)detector;
  return pr;
}

// ---------------------------------------------------------------------------
// Single solves.

struct Fit {
  bool optimal = false;
  bool infeasible = false;  // solver certified emptiness
  double objective = kNan;
  int iterations = 0;
  std::string message;
  SolutionBlocks blocks;
};

void extract_common(const sdp::SdpSolution& sol, const detail::CovarianceVars& v,
                    SolutionBlocks& b) {
  b.p_x = sol.value(v.px);
  b.q1 = sol.value(v.q1);
  b.x = sol.value(v.x);
  b.y = sol.value(v.y);
  b.z = sol.value(v.z);
}

// The magnification objective leaves the gain carriers on a flat optimal
// face, so which point the solver returns is noise. A second solve with the
// minimal trace pinned (small slack keeps an interior) and the output-
// weighted trace as objective picks the cost-optimal point deterministically.
constexpr double kPolishSlack = 3e-3;

void add_trace_cap(sdp::SdpProblem& prob, const LtiSystem& sys, sdp::VarHandle px, double cap) {
  sdp::LinExpr e = prob.trace_of(Matrix::Identity(sys.n, sys.n), px);
  e.constant -= cap;
  prob.add_linear_leq(e);
}

Fit run_fixed_observer(const LtiSystem& sys, double sigma, const Matrix& l_fixed,
                       const Matrix& sigma_res, double nu_bar, double alpha, double a,
                       double gamma_bar, const sdp::SolveOptions& opts,
                       const double* polish_cap = nullptr) {
  sdp::SdpProblem prob;
  const FixedObserverProgram pr =
      fixed_observer_exprs(prob, sys, sigma, l_fixed, sigma_res, nu_bar, alpha, a);
  prob.add_psd_block(pr.security);
  detail::add_covariance_lmi(prob, sys, pr.cov);
  detail::add_cost_ceiling(prob, sys, pr.cov.px, gamma_bar);
  sdp::LinExpr split;
  split.constant = a;
  split += -1.0 * prob.scalar(pr.a1);
  split += -1.0 * prob.scalar(pr.a2);
  prob.add_linear_leq(split);
  if (polish_cap) {
    add_trace_cap(prob, sys, pr.cov.px, *polish_cap);
    prob.minimize(prob.trace_of(sym(sys.c.transpose() * sys.c), pr.cov.px));
  } else {
    prob.minimize(sigma * prob.trace_of(Matrix::Identity(sys.n, sys.n), pr.cov.px));
  }

  const sdp::SdpSolution sol = sdp::solve(prob, opts);
  Fit fit;
  fit.iterations = sol.iterations;
  fit.message = sol.message;
  fit.infeasible = sol.status == sdp::SolveStatus::kInfeasible;
  if (sol.status == sdp::SolveStatus::kOptimal) {
    fit.optimal = true;
    fit.objective = sol.objective_value;
    fit.blocks.a = a;
    fit.blocks.a1 = sol.scalar_value(pr.a1);
    fit.blocks.a2 = sol.scalar_value(pr.a2);
    extract_common(sol, pr.cov, fit.blocks);
    fit.blocks.p3 = sol.value(pr.p3);
    fit.blocks.l_fixed = l_fixed;
    fit.blocks.sigma_res = sigma_res;
  }
  return fit;
}

Fit run_manifold(const LtiSystem& sys, double sigma, double a, double a2,
                 const DetectorConfig& detector, const TruncationConfig& trunc,
                 std::optional<double> gamma_bar, const sdp::SolveOptions& opts,
                 double* tau_out = nullptr, const double* polish_cap = nullptr) {
  sdp::SdpProblem prob;
  const ManifoldProgram pr = manifold_exprs(prob, sys, sigma, a, a2, detector, trunc);
  prob.add_psd_block(pr.security);
  prob.add_psd_block(pr.err_cov);
  prob.add_psd_block(pr.res_shape);
  detail::add_covariance_lmi(prob, sys, pr.cov);
  sdp::VarHandle tau;
  if (polish_cap) {
    detail::add_cost_ceiling(prob, sys, pr.cov.px, *gamma_bar);
    add_trace_cap(prob, sys, pr.cov.px, *polish_cap);
    prob.minimize(prob.trace_of(sym(sys.c.transpose() * sys.c), pr.cov.px));
  } else if (gamma_bar) {
    detail::add_cost_ceiling(prob, sys, pr.cov.px, *gamma_bar);
    prob.minimize(sigma * prob.trace_of(Matrix::Identity(sys.n, sys.n), pr.cov.px));
  } else {
    tau = prob.add_scalar_var("tau", 0.0, 1e8);
    detail::add_cost_ceiling_var(prob, sys, pr.cov.px, tau);
    prob.minimize(prob.scalar(tau));
  }

  const sdp::SdpSolution sol = sdp::solve(prob, opts);
  Fit fit;
  fit.iterations = sol.iterations;
  fit.message = sol.message;
  fit.infeasible = sol.status == sdp::SolveStatus::kInfeasible;
  if (sol.status == sdp::SolveStatus::kOptimal) {
    fit.optimal = true;
    fit.objective = sol.objective_value;
    fit.blocks.a = a;
    fit.blocks.a1 = sol.scalar_value(pr.a1);
    fit.blocks.a2 = a2;
    extract_common(sol, pr.cov, fit.blocks);
    fit.blocks.pi = sol.value(pr.pi);
    if (tau_out && tau.valid()) *tau_out = sol.scalar_value(tau);
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Gain extraction.

struct Selected {
  bool ok = false;
  GainPair gains;
  double objective = kInf;  // reachable-bound trace certified by the pair
};

Selected select_candidate(const LtiSystem& sys, const detail::RecoveryResult& rec,
                          const DetectorConfig& detector, const TruncationConfig& trunc) {
  Selected best;
  for (const detail::GainCandidate& cand : rec.candidates) {
    if (!cand.stable) continue;
    double obj = kInf;
    try {
      obj = bound_reachable_set(sys, cand.gains, detector, trunc).objective;
    } catch (const Error&) {
      continue;  // pair certifies nothing; skip it
    }
    const double tol = 1e-9 * std::max(1.0, std::abs(best.objective));
    const bool tie = best.ok && std::abs(obj - best.objective) <= tol;
    const bool better = !best.ok || (tie ? cand.gains.l.norm() < best.gains.l.norm()
                                         : obj < best.objective);
    if (better) {
      best.ok = true;
      best.gains = cand.gains;
      best.objective = obj;
    }
  }
  return best;
}

GainPair recover_manifold(const LtiSystem& sys, const SolutionBlocks& b);

// Replaces fit with the polished solve at the same cell when the secondary
// solve and its gain recovery both succeed.
bool polish_manifold_fit(const LtiSystem& sys, double sigma, double gamma_bar,
                         const DetectorConfig& detector, const TruncationConfig& trunc,
                         const sdp::SolveOptions& base_opts, Fit& fit, GainPair& gains) {
  const double tr_opt = fit.objective / sigma;
  sdp::SolveOptions po = base_opts;
  po.max_iters = std::max(po.max_iters, 200);
  for (double slack : {kPolishSlack, 1e-2}) {
    const double cap = tr_opt * (1.0 + slack);
    Fit pol = run_manifold(sys, sigma, fit.blocks.a, fit.blocks.a2, detector, trunc, gamma_bar,
                           po, nullptr, &cap);
    if (!pol.optimal) continue;
    try {
      const GainPair g = recover_manifold(sys, pol.blocks);
      const GammaEval ge = evaluate_gamma(sys, g);
      if (!ge.stable || ge.gamma > gamma_bar + 1e-6) continue;
      pol.objective = sigma * pol.blocks.p_x.trace();
      fit = pol;
      gains = g;
      return true;
    } catch (const Error&) {
    }
  }
  return false;
}

GainPair recover_manifold(const LtiSystem& sys, const SolutionBlocks& b) {
  const Matrix q1_inv = inverse_spd(b.q1);
  GainPair g;
  g.l = -(q1_inv * b.x);
  const Matrix p_xxhat = b.p_x - q1_inv;
  if (!(cond2(p_xxhat) < kCondLimit)) {
    throw NumericalError(
        "manifold gain recovery: the state/estimate coupling block is numerically singular");
  }
  g.k = p_xxhat.transpose().partialPivLu().solve(b.y.transpose()).transpose();
  return g;
}

// ---------------------------------------------------------------------------
// Iterative engine: observer-gain fixed point inside, magnification
// bisection outside, ceiling ramp around everything.

struct InnerOutcome {
  bool usable = false;     // counts as feasible for the bisection
  bool converged = false;  // observer gain reached a fixed point
  bool hit_cap = false;
  bool recovery_failed = false;
  int iters = 0;
  double l_delta = kNan;
  double a = kNan;
  GainPair gains;
  Fit fit;
  std::string note;
};

InnerOutcome run_inner(const LtiSystem& sys, double sigma, double gamma_bar,
                       const Matrix& l_start, const DetectorConfig& detector,
                       const TruncationConfig& trunc, const CodesignConfig& cfg,
                       const std::vector<double>& a_grid, std::vector<int>& a_order,
                       bool full_scan, int& solves) {
  InnerOutcome out;
  Matrix l_cur = l_start;
  for (int it = 0; it < cfg.max_inner_iters; ++it) {
    const Matrix sigma_res = residual_covariance(sys, l_cur).sigma;
    Fit best;
    std::string last_message;
    if (full_scan) {
      for (int idx : a_order) {
        const Fit fit = run_fixed_observer(sys, sigma, l_cur, sigma_res, trunc.nu_bar,
                                           detector.alpha, a_grid[idx], gamma_bar, cfg.solve);
        ++solves;
        if (fit.optimal && (!best.optimal || fit.objective < best.objective)) best = fit;
        if (!fit.optimal) last_message = fit.message;
      }
    } else {
      for (std::size_t pos = 0; pos < a_order.size(); ++pos) {
        const int idx = a_order[pos];
        const Fit fit = run_fixed_observer(sys, sigma, l_cur, sigma_res, trunc.nu_bar,
                                           detector.alpha, a_grid[idx], gamma_bar, cfg.solve);
        ++solves;
        if (fit.optimal) {
          best = fit;
          a_order.erase(a_order.begin() + static_cast<std::ptrdiff_t>(pos));
          a_order.insert(a_order.begin(), idx);
          break;
        }
        last_message = fit.message;
      }
    }
    if (!best.optimal) {
      out.note = it == 0 ? "no contraction rate admits the constraints: " + last_message
                         : "feasibility lost while re-linearizing the observer";
      return out;
    }
    out.fit = best;
    out.a = best.blocks.a;

    detail::RecoveryResult rec;
    try {
      rec = detail::recover_gains(sys, best.blocks.q1, best.blocks.p_x, best.blocks.x,
                                  best.blocks.y, best.blocks.z, kCondLimit);
    } catch (const Error& e) {
      out.recovery_failed = true;
      out.note = e.what();
      return out;
    }
    const Selected sel = select_candidate(sys, rec, detector, trunc);
    if (!sel.ok) {
      out.recovery_failed = true;
      out.note = "gain factorization produced no stabilizing pair";
      return out;
    }
    out.gains = sel.gains;
    out.iters = it + 1;
    out.l_delta = (sel.gains.l - l_cur).norm();
    l_cur = sel.gains.l;
    if (out.l_delta <= cfg.epsilon_l) {
      out.usable = true;
      out.converged = true;
      return out;
    }
  }
  out.hit_cap = true;
  out.note = "observer gain did not settle within the sweep cap";
  return out;
}

struct StageResult {
  double sigma = kNan;  // NaN marks a skipped ramp stage
  InnerOutcome inner;
};

StageResult iterate_stage(const LtiSystem& sys, double gamma_bar, Matrix& l_warm, double hint_hi,
                          double rel_tol, bool final_stage, const DetectorConfig& detector,
                          const TruncationConfig& trunc, const CodesignConfig& cfg,
                          const std::vector<double>& a_grid, std::vector<int>& a_order,
                          std::vector<ProbeLog>& diag, int& solves) {
  auto probe = [&](double s, bool scan) {
    InnerOutcome r = run_inner(sys, s, gamma_bar, l_warm, detector, trunc, cfg, a_grid, a_order,
                               scan, solves);
    ProbeLog log;
    log.gamma_bar = gamma_bar;
    log.sigma = s;
    log.a = r.a;
    log.a2 = r.fit.optimal ? r.fit.blocks.a2 : kNan;
    log.inner_iters = r.iters;
    log.l_delta = r.l_delta;
    log.feasible = r.usable;
    log.note = r.note;
    diag.push_back(std::move(log));
    if (r.usable) l_warm = r.gains.l;
    return r;
  };

  double hi = hint_hi > 0.0 ? std::min(hint_hi, cfg.sigma_max) : cfg.sigma_max;
  InnerOutcome r_hi = probe(hi, false);
  while (!r_hi.usable && hi < cfg.sigma_max) {
    hi = std::min(hi * 10.0, cfg.sigma_max);
    r_hi = probe(hi, false);
  }
  if (!r_hi.usable) {
    if (!final_stage) return {kNan, r_hi};
    std::ostringstream os;
    if (r_hi.recovery_failed) {
      os << "gain recovery failed at ceiling " << gamma_bar << ": " << r_hi.note;
      throw NumericalError(os.str());
    }
    if (r_hi.hit_cap) {
      os << "observer iteration did not converge within " << cfg.max_inner_iters
         << " sweeps at ceiling " << gamma_bar << " (last step " << r_hi.l_delta << ")";
      throw NumericalError(os.str());
    }
    os << "no feasible magnification: the security program stays infeasible up to sigma_max "
       << cfg.sigma_max << " at ceiling " << gamma_bar;
    if (!r_hi.note.empty()) os << " (" << r_hi.note << ")";
    throw InfeasibleError(os.str());
  }

  // Establish an infeasible lower end, racing downward in decade-sized steps.
  double lo = cfg.sigma_min;
  bool lo_infeasible = false;
  double next_lo = std::max(cfg.sigma_min, hi / 1024.0);
  while (hi > cfg.sigma_min * (1.0 + 1e-12)) {
    if (next_lo >= hi) break;
    const InnerOutcome r = probe(next_lo, false);
    if (r.usable) {
      hi = next_lo;
      r_hi = r;
      next_lo = std::max(cfg.sigma_min, next_lo / 1024.0);
      continue;
    }
    lo = next_lo;
    lo_infeasible = true;
    break;
  }

  if (lo_infeasible) {
    while (hi / lo > 1.0 + rel_tol) {
      const double mid = std::sqrt(hi * lo);
      if (mid <= lo * (1.0 + 1e-12) || mid >= hi * (1.0 - 1e-12)) break;
      const InnerOutcome r = probe(mid, false);
      if (r.usable) {
        hi = mid;
        r_hi = r;
      } else {
        lo = mid;
      }
    }
  }

  if (final_stage) {
    // Full contraction-rate scan at the settled magnification.
    const InnerOutcome r = probe(hi, true);
    if (r.usable) r_hi = r;

    // Deterministic extraction at the settled point.
    const Fit f = r_hi.fit;
    sdp::SolveOptions po = cfg.solve;
    po.max_iters = std::max(po.max_iters, 200);
    for (double slack : {kPolishSlack, 1e-2}) {
      const double cap = f.objective / hi * (1.0 + slack);
      const Fit pol =
          run_fixed_observer(sys, hi, f.blocks.l_fixed, f.blocks.sigma_res, trunc.nu_bar,
                             detector.alpha, f.blocks.a, gamma_bar, po, &cap);
      if (!pol.optimal) continue;
      detail::RecoveryResult rec;
      try {
        rec = detail::recover_gains(sys, pol.blocks.q1, pol.blocks.p_x, pol.blocks.x,
                                    pol.blocks.y, pol.blocks.z, kCondLimit);
      } catch (const Error&) {
        continue;
      }
      const Selected sel = select_candidate(sys, rec, detector, trunc);
      if (!sel.ok) continue;
      const GammaEval ge = evaluate_gamma(sys, sel.gains);
      if (!ge.stable || ge.gamma > gamma_bar + 1e-6) continue;
      r_hi.gains = sel.gains;
      r_hi.fit = pol;
      break;
    }
  }
  return {hi, r_hi};
}

CodesignResult assemble_result(const LtiSystem& sys, DesignMethod method, double gamma_bar,
                               double sigma, const GainPair& gains, const SolutionBlocks& blocks,
                               const DetectorConfig& detector, const TruncationConfig& trunc) {
  CodesignResult out;
  out.method = method;
  out.gains = gains;
  out.sigma = sigma;
  out.gamma_bar = gamma_bar;
  out.blocks = blocks;

  const GammaEval ge = evaluate_gamma(sys, gains);
  if (!ge.stable) {
    throw NumericalError("recovered gain pair does not stabilize the loop despite certificates");
  }
  out.gamma = ge.gamma;
  out.mae_lyapunov = (blocks.p_x - ge.p_x).cwiseAbs().mean();
  out.bound = bound_reachable_set(sys, gains, detector, trunc);
  out.ellipsoid_x = sigma * blocks.p_x;
  return out;
}

CodesignResult iterative_core(const LtiSystem& sys, double gamma_target, double gamma_start,
                              const Matrix& l_init, double sigma_hint,
                              const DetectorConfig& detector, const TruncationConfig& trunc,
                              const CodesignConfig& cfg) {
  const std::vector<double> a_grid = cfg.a_grid.empty() ? default_a_grid() : cfg.a_grid;
  std::vector<int> a_order(a_grid.size());
  for (std::size_t i = 0; i < a_order.size(); ++i) a_order[i] = static_cast<int>(i);

  std::vector<double> path;
  for (double g = gamma_start + cfg.gamma_step; g < gamma_target - 1e-9; g += cfg.gamma_step) {
    path.push_back(g);
  }
  path.push_back(gamma_target);

  std::vector<ProbeLog> diag;
  std::vector<double> warm_path;
  Matrix l_warm = l_init;
  double hint = sigma_hint;
  int solves = 0;
  StageResult final_stage;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const bool last = i + 1 == path.size();
    const double tol = last ? cfg.sigma_bisect_tol : kRampBisectTol;
    StageResult st = iterate_stage(sys, path[i], l_warm, hint, tol, last, detector, trunc, cfg,
                                   a_grid, a_order, diag, solves);
    if (last) {
      final_stage = std::move(st);
    } else {
      warm_path.push_back(path[i]);
      // A skipped stage (too hard this close to the optimum) keeps the
      // previous warm start; the bracket hint doubles as slack for the next.
      if (std::isfinite(st.sigma)) hint = st.sigma * 2.0;
    }
  }

  CodesignResult out =
      assemble_result(sys, DesignMethod::kIterative, gamma_target, final_stage.sigma,
                      final_stage.inner.gains, final_stage.inner.fit.blocks, detector, trunc);
  out.diagnostics = std::move(diag);
  out.warm_start_path = std::move(warm_path);
  out.total_solves = solves;
  return out;
}

// ---------------------------------------------------------------------------
// Convex engine.

struct Cell {
  double a = 0.0;
  double a2 = 0.0;
};

struct CellFit {
  bool usable = false;
  Fit fit;
  std::string note;
};

CellFit probe_cells(const LtiSystem& sys, double sigma, double gamma_bar,
                    const DetectorConfig& detector, const TruncationConfig& trunc,
                    const std::vector<Cell>& cells, std::vector<int>& order,
                    const sdp::SolveOptions& opts, std::vector<ProbeLog>& diag, int& solves) {
  CellFit out;
  std::string last_message;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const int idx = order[pos];
    const Fit fit = run_manifold(sys, sigma, cells[idx].a, cells[idx].a2, detector, trunc,
                                 gamma_bar, opts);
    ++solves;
    if (fit.optimal) {
      order.erase(order.begin() + static_cast<std::ptrdiff_t>(pos));
      order.insert(order.begin(), idx);
      out.usable = true;
      out.fit = fit;
      break;
    }
    last_message = fit.message;
  }
  if (!out.usable) out.note = last_message;
  ProbeLog log;
  log.gamma_bar = gamma_bar;
  log.sigma = sigma;
  log.a = out.usable ? out.fit.blocks.a : kNan;
  log.a2 = out.usable ? out.fit.blocks.a2 : kNan;
  log.feasible = out.usable;
  log.note = out.note;
  diag.push_back(std::move(log));
  return out;
}

CodesignResult convex_core(const LtiSystem& sys, double gamma_bar, const DetectorConfig& detector,
                           const TruncationConfig& trunc, const CodesignConfig& cfg,
                           double sigma_hint, std::vector<int>* order_state) {
  const std::vector<double> a_grid = cfg.a_grid.empty() ? default_a_grid() : cfg.a_grid;
  const std::vector<double> a2_grid = cfg.a2_grid.empty() ? default_a2_grid() : cfg.a2_grid;
  std::vector<Cell> cells;
  for (double a : a_grid) {
    for (double a2 : a2_grid) cells.push_back({a, a2});
  }
  std::vector<int> local_order;
  std::vector<int>& order = order_state ? *order_state : local_order;
  if (order.size() != cells.size()) {
    order.resize(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) order[i] = static_cast<int>(i);
  }

  std::vector<ProbeLog> diag;
  int solves = 0;
  auto probe = [&](double s) {
    return probe_cells(sys, s, gamma_bar, detector, trunc, cells, order, cfg.solve, diag, solves);
  };

  double hi = sigma_hint > 0.0 ? std::min(sigma_hint, cfg.sigma_max) : cfg.sigma_max;
  CellFit r_hi = probe(hi);
  while (!r_hi.usable && hi < cfg.sigma_max) {
    hi = std::min(hi * 10.0, cfg.sigma_max);
    r_hi = probe(hi);
  }
  if (!r_hi.usable) {
    double gamma_bar_c = kNan;
    try {
      gamma_bar_c = infimum_gamma_on_manifold(sys, detector, trunc, 1e5, cfg).gamma_bar_c;
    } catch (const Error&) {
    }
    std::ostringstream os;
    os << "ceiling " << gamma_bar << " is below the feasibility threshold of the manifold design";
    if (std::isfinite(gamma_bar_c)) os << " (smallest feasible ceiling near " << gamma_bar_c << ")";
    os << "; no magnification up to " << cfg.sigma_max << " admits the constraints";
    throw InfeasibleError(os.str());
  }

  double lo = cfg.sigma_min;
  bool lo_infeasible = false;
  double next_lo = std::max(cfg.sigma_min, hi / 1024.0);
  while (hi > cfg.sigma_min * (1.0 + 1e-12)) {
    if (next_lo >= hi) break;
    const CellFit r = probe(next_lo);
    if (r.usable) {
      hi = next_lo;
      r_hi = r;
      next_lo = std::max(cfg.sigma_min, next_lo / 1024.0);
      continue;
    }
    lo = next_lo;
    lo_infeasible = true;
    break;
  }
  if (lo_infeasible) {
    while (hi / lo > 1.0 + cfg.sigma_bisect_tol) {
      const double mid = std::sqrt(hi * lo);
      if (mid <= lo * (1.0 + 1e-12) || mid >= hi * (1.0 - 1e-12)) break;
      const CellFit r = probe(mid);
      if (r.usable) {
        hi = mid;
        r_hi = r;
      } else {
        lo = mid;
      }
    }
  }

  // Full grid sweep at the settled magnification; keep the smallest objective.
  Fit best = r_hi.fit;
  for (const Cell& cell : cells) {
    const Fit fit =
        run_manifold(sys, hi, cell.a, cell.a2, detector, trunc, gamma_bar, cfg.solve);
    ++solves;
    ProbeLog log;
    log.gamma_bar = gamma_bar;
    log.sigma = hi;
    log.a = cell.a;
    log.a2 = cell.a2;
    log.feasible = fit.optimal;
    log.note = fit.optimal ? "final sweep" : fit.message;
    diag.push_back(std::move(log));
    if (fit.optimal && fit.objective < best.objective) best = fit;
  }

  GainPair gains;
  if (!polish_manifold_fit(sys, hi, gamma_bar, detector, trunc, cfg.solve, best, gains)) {
    gains = recover_manifold(sys, best.blocks);
  }
  CodesignResult out = assemble_result(sys, DesignMethod::kConvex, gamma_bar, hi, gains,
                                       best.blocks, detector, trunc);
  out.diagnostics = std::move(diag);
  out.total_solves = solves;
  return out;
}

}  // namespace

const char* to_string(DesignMethod m) {
  return m == DesignMethod::kIterative ? "iterative" : "convex";
}

CodesignResult design_iterative(const LtiSystem& sys, double gamma_bar,
                                const DetectorConfig& detector, const TruncationConfig& trunc,
                                const CodesignConfig& config) {
  validate_config(config);
  const H2Design h2 = optimal_occ_h2(sys);
  if (!(gamma_bar > h2.gamma)) {
    std::ostringstream os;
    os << "ceiling " << gamma_bar << " does not exceed the unconstrained optimum " << h2.gamma
       << "; there is no performance to trade";
    throw ArgumentError(os.str());
  }
  return iterative_core(sys, gamma_bar, h2.gamma, h2.gains.l, -1.0, detector, trunc, config);
}

CodesignResult design_convex(const LtiSystem& sys, double gamma_bar,
                             const DetectorConfig& detector, const TruncationConfig& trunc,
                             const CodesignConfig& config) {
  validate_config(config);
  return convex_core(sys, gamma_bar, detector, trunc, config, -1.0, nullptr);
}

ManifoldInfimum infimum_gamma_on_manifold(const LtiSystem& sys, const DetectorConfig& detector,
                                          const TruncationConfig& trunc, double sigma_fixed,
                                          const CodesignConfig& config) {
  validate_config(config);
  if (!(sigma_fixed > 0.0)) {
    throw ArgumentError("the fixed magnification must be positive");
  }
  const std::vector<double> a_grid = config.a_grid.empty() ? default_a_grid() : config.a_grid;
  const std::vector<double> a2_grid = config.a2_grid.empty() ? default_a2_grid() : config.a2_grid;

  ManifoldInfimum out;
  out.sigma_fixed = sigma_fixed;
  double best_tau = kInf;
  Fit best;
  for (double a : a_grid) {
    for (double a2 : a2_grid) {
      double tau = kNan;
      const Fit fit = run_manifold(sys, sigma_fixed, a, a2, detector, trunc, std::nullopt,
                                   config.solve, &tau);
      ProbeLog log;
      log.sigma = sigma_fixed;
      log.a = a;
      log.a2 = a2;
      log.feasible = fit.optimal;
      log.gamma_bar = fit.optimal ? std::sqrt(tau) : kNan;
      log.note = fit.optimal ? "" : fit.message;
      out.diagnostics.push_back(std::move(log));
      if (fit.optimal && tau < best_tau) {
        best_tau = tau;
        best = fit;
        out.a = a;
        out.a2 = a2;
      }
    }
  }
  if (!best.optimal) {
    std::ostringstream os;
    os << "ceiling minimization is infeasible at magnification " << sigma_fixed
       << "; retry with a larger value";
    throw InfeasibleError(os.str());
  }
  out.gamma_bar_c = std::sqrt(best_tau);

  // Extract gains a hair above the threshold, where the programs still have
  // an interior and the recovery is well conditioned.
  const double g_ext = out.gamma_bar_c * (1.0 + 1e-3);
  bool have = false;
  Fit ext = run_manifold(sys, sigma_fixed, out.a, out.a2, detector, trunc, g_ext, config.solve);
  if (ext.optimal) {
    GainPair g;
    if (polish_manifold_fit(sys, sigma_fixed, g_ext, detector, trunc, config.solve, ext, g)) {
      out.gains = g;
      have = true;
    } else {
      try {
        out.gains = recover_manifold(sys, ext.blocks);
        have = true;
      } catch (const Error&) {
      }
    }
  }
  if (!have) out.gains = recover_manifold(sys, best.blocks);
  const GammaEval ge = evaluate_gamma(sys, out.gains);
  if (!ge.stable) {
    throw NumericalError("ceiling minimization returned a non-stabilizing gain pair");
  }
  out.gamma_c = ge.gamma;
  return out;
}

std::vector<TradeoffPoint> tradeoff_curve(const LtiSystem& sys, const DetectorConfig& detector,
                                          const TruncationConfig& trunc,
                                          const std::vector<double>& gamma_bar_list,
                                          DesignMethod method, const CodesignConfig& config) {
  validate_config(config);
  if (!std::is_sorted(gamma_bar_list.begin(), gamma_bar_list.end())) {
    throw ArgumentError("ceiling list must be sorted ascending");
  }

  std::vector<TradeoffPoint> out;
  std::optional<H2Design> h2;
  Matrix l_warm;
  double gamma_prev = kNan;
  double hint = -1.0;
  std::vector<int> order_state;
  for (double g : gamma_bar_list) {
    TradeoffPoint pt;
    pt.gamma_bar = g;
    pt.gamma = kNan;
    pt.security_objective = kNan;
    try {
      CodesignResult r;
      if (method == DesignMethod::kIterative) {
        if (!h2) h2 = optimal_occ_h2(sys);
        if (!(g > h2->gamma)) {
          std::ostringstream os;
          os << "ceiling " << g << " does not exceed the unconstrained optimum " << h2->gamma;
          throw ArgumentError(os.str());
        }
        if (std::isfinite(gamma_prev)) {
          r = iterative_core(sys, g, gamma_prev, l_warm, hint, detector, trunc, config);
        } else {
          r = iterative_core(sys, g, h2->gamma, h2->gains.l, -1.0, detector, trunc, config);
        }
        l_warm = r.gains.l;
        gamma_prev = g;
      } else {
        r = convex_core(sys, g, detector, trunc, config, hint, &order_state);
      }
      hint = r.sigma * 2.0;
      pt.gamma = r.gamma;
      pt.security_objective = r.bound.objective;
      pt.feasible = true;
    } catch (const Error&) {
      // Recorded as a gap; later ceilings may still succeed.
    }
    out.push_back(pt);
  }
  return out;
}

CertificateCheck verify_certificates(const LtiSystem& sys, const DetectorConfig& detector,
                                     const TruncationConfig& trunc,
                                     const CodesignResult& result) {
  const SolutionBlocks& b = result.blocks;
  CertificateCheck out;
  out.s_l_min_eig = kNan;
  out.x_l_min_eig = kNan;

  sdp::SdpProblem prob;
  std::vector<Matrix> vals;
  auto put = [&vals](sdp::VarHandle h, const Matrix& m) {
    if (static_cast<int>(vals.size()) <= h.id) vals.resize(static_cast<std::size_t>(h.id) + 1);
    vals[static_cast<std::size_t>(h.id)] = m;
  };
  auto put_scalar = [&put](sdp::VarHandle h, double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    put(h, m);
  };

  if (result.method == DesignMethod::kIterative) {
    const FixedObserverProgram pr = fixed_observer_exprs(
        prob, sys, result.sigma, b.l_fixed, b.sigma_res, trunc.nu_bar, detector.alpha, b.a);
    const sdp::MatExpr cl = detail::covariance_lmi_expr(prob, sys, pr.cov);
    put_scalar(pr.a1, b.a1);
    put_scalar(pr.a2, b.a2);
    put(pr.cov.q1, b.q1);
    put(pr.cov.px, b.p_x);
    put(pr.cov.x, b.x);
    put(pr.cov.y, b.y);
    put(pr.cov.z, b.z);
    put(pr.p3, b.p3);
    out.h_l_min_eig = min_eig(eval_expr(pr.security, vals));
    out.c_l_min_eig = min_eig(eval_expr(cl, vals));
  } else {
    const ManifoldProgram pr =
        manifold_exprs(prob, sys, result.sigma, b.a, b.a2, detector, trunc);
    const sdp::MatExpr cl = detail::covariance_lmi_expr(prob, sys, pr.cov);
    put_scalar(pr.a1, b.a1);
    put(pr.cov.q1, b.q1);
    put(pr.cov.px, b.p_x);
    put(pr.cov.x, b.x);
    put(pr.cov.y, b.y);
    put(pr.cov.z, b.z);
    put(pr.pi, b.pi);
    out.h_l_min_eig = min_eig(eval_expr(pr.security, vals));
    out.c_l_min_eig = min_eig(eval_expr(cl, vals));
    out.s_l_min_eig = min_eig(eval_expr(pr.err_cov, vals));
    out.x_l_min_eig = min_eig(eval_expr(pr.res_shape, vals));
  }

  const double traces = sys.r1.trace() + sys.r2.trace();
  out.c_h_value = (sym(sys.c.transpose() * sys.c) * b.p_x).trace() + sys.r2.trace() -
                  result.gamma_bar * result.gamma_bar * traces;
  return out;
}

}  // namespace secgain

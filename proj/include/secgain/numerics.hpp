#pragma once

#include <vector>

#include "secgain/linalg.hpp"

namespace secgain {

// Solves the discrete Lyapunov equation X = A X A' + Q for symmetric Q via
// Kronecker vectorization. Intended for small state dimensions (n <= 8).
// Throws UnstableError when spectral_radius(A) >= 1 and NumericalError when
// the back-substituted residual is not small.
Matrix dlyap(const Matrix& a, const Matrix& q);

// Regularized lower incomplete gamma P(a, x); CDF of the chi-squared
// distribution is chi2_cdf(x, dof) = P(dof/2, x/2).
double chi2_cdf(double x, double dof);

// Inverse CDF: returns q with chi2_cdf(q, dof) == prob. prob must lie in
// [0, 1); dof must be positive.
double chi2_quantile(double prob, double dof);

// Quadratic matrix equation  X*G1*X + X*G2 + G3*X + G4 = 0  with all blocks
// n-by-n. Solutions correspond to n-dimensional invariant subspaces of the
// 2n-by-2n linearization M = [[-G2, -G1], [G4, G3]]: if M [U; V] = [U; V] S
// with U invertible then X = V U^-1.
struct QuadraticMatrixProblem {
  Matrix gamma1;
  Matrix gamma2;
  Matrix gamma3;
  Matrix gamma4;
};

struct RiccatiSolutionSet {
  std::vector<Matrix> solutions;   // real solutions, residual-certified
  std::vector<double> residuals;   // max-abs residual per solution
  int discarded_complex_count = 0;   // subsets yielding genuinely complex X
  int discarded_singular_count = 0;  // basis too ill-conditioned to invert
  int discarded_residual_count = 0;  // real X that failed the residual gate
  int total_candidates = 0;          // subsets enumerated, C(2n, n)
};

// Enumerates every C(2n, n) eigenvector subset of M. Subsets containing one
// member of a complex-conjugate pair produce complex X and are discarded
// (counted); closed pairs are realified through their real/imaginary parts.
// Falls back to ordered-Schur subspace enumeration when M is defective.
// An empty solution list is a valid outcome, not an error.
RiccatiSolutionSet solve_quadratic_matrix_eq(const QuadraticMatrixProblem& problem,
                                             double cond_limit = 1e10);

}  // namespace secgain

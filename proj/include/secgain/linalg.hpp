#pragma once

#include <Eigen/Dense>

#include "secgain/errors.hpp"

namespace secgain {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Symmetric part. Used after every solve that should return a symmetric matrix,
// so downstream eigenvalue routines see exactly symmetric input.
inline Matrix sym(const Matrix& m) { return 0.5 * (m + m.transpose()); }

// Largest |eigenvalue| of a (not necessarily symmetric) square matrix.
double spectral_radius(const Matrix& m);

// min eig(sym(m)) >= -tol. Callers pass tol matched to their data scale.
bool is_psd(const Matrix& m, double tol);

// Kronecker product, dense.
Matrix kron(const Matrix& a, const Matrix& b);

// Symmetric PSD square root via eigendecomposition; negative eigenvalues
// within -clamp_tol are clamped to zero, more negative ones throw.
Matrix sqrt_psd(const Matrix& m, double clamp_tol = 1e-9);

// 2-norm condition number (sigma_max / sigma_min), +inf when singular.
double cond2(const Matrix& m);

// Inverse of a symmetric positive definite matrix via Cholesky, symmetrized.
Matrix inverse_spd(const Matrix& m);

}  // namespace secgain

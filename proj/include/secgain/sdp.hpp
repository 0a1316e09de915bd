#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "secgain/linalg.hpp"

// Small dense semidefinite programming layer: affine matrix expressions in
// declared variables, PSD block constraints, scalar linear constraints, and a
// linear objective, solved by a primal-dual interior-point method. Sized for
// control LMIs with a few dozen scalar unknowns and blocks up to a few tens
// of rows, not for large sparse problems.
namespace secgain::sdp {

struct VarHandle {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class VarKind { kSymmetric, kGeneral, kScalar };

struct VarInfo {
  std::string name;
  VarKind kind = VarKind::kScalar;
  int rows = 0;
  int cols = 0;
  double lower = -std::numeric_limits<double>::infinity();  // scalar vars only
  double upper = std::numeric_limits<double>::infinity();
  int scalar_offset = 0;  // first index in the packed scalar vector
  int scalar_count = 0;
};

// One term of an affine matrix expression: coeff * pre * V * post, with V the
// variable matrix (transposed first when `transposed` is set).
struct MatTerm {
  int var = -1;
  double coeff = 1.0;
  Matrix pre;
  Matrix post;
  bool transposed = false;
};

class MatExpr {
 public:
  MatExpr() = default;
  static MatExpr zero(int rows, int cols);
  static MatExpr constant(const Matrix& m);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const Matrix& constant_part() const { return constant_; }
  const std::vector<MatTerm>& terms() const { return terms_; }

  MatExpr transpose() const;
  MatExpr& operator+=(const MatExpr& other);
  MatExpr& operator-=(const MatExpr& other);
  MatExpr& operator*=(double s);

  friend MatExpr operator+(MatExpr a, const MatExpr& b) { return a += b; }
  friend MatExpr operator-(MatExpr a, const MatExpr& b) { return a -= b; }
  friend MatExpr operator*(double s, MatExpr e) { return e *= s; }
  friend MatExpr operator-(MatExpr e) { return e *= -1.0; }
  friend MatExpr operator*(const Matrix& lhs, MatExpr e);
  friend MatExpr operator*(MatExpr e, const Matrix& rhs);

 private:
  friend class SdpProblem;
  friend class BlockExpr;
  int rows_ = 0;
  int cols_ = 0;
  Matrix constant_;  // rows x cols, zero-initialized
  std::vector<MatTerm> terms_;
};

// Scalar affine expression, kept at (variable, entry) granularity.
struct LinTerm {
  int var = -1;
  int row = 0;
  int col = 0;
  double coeff = 0.0;
};

struct LinExpr {
  double constant = 0.0;
  std::vector<LinTerm> terms;

  LinExpr& operator+=(const LinExpr& other);
  LinExpr& operator*=(double s);
  friend LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
  friend LinExpr operator*(double s, LinExpr e) { return e *= s; }
  friend LinExpr operator-(LinExpr a, const LinExpr& b) {
    LinExpr nb = b;
    nb *= -1.0;
    return a += nb;
  }
};

// Assembles a block matrix expression from a grid of sub-expressions.
// Unset blocks are zero. With `mirrored` construction (make_symmetric), a
// block set at (i, j) with i != j also fills (j, i) with its transpose, and
// diagonal blocks are symmetrized, so the result is symmetric for any
// variable values.
class BlockExpr {
 public:
  static BlockExpr make(std::vector<int> row_sizes, std::vector<int> col_sizes);
  static BlockExpr make_symmetric(std::vector<int> sizes);

  void set(int i, int j, MatExpr e);
  MatExpr assemble() const;

 private:
  BlockExpr() = default;
  std::vector<int> row_sizes_, col_sizes_;
  std::vector<int> row_offsets_, col_offsets_;
  bool mirrored_ = false;
  std::vector<std::optional<MatExpr>> cells_;
  int rows_total_ = 0, cols_total_ = 0;
};

enum class SolveStatus { kOptimal, kInfeasible, kNumericalFailure };

const char* to_string(SolveStatus s);

struct SolveOptions;
struct SdpSolution;
class SdpProblem;
SdpSolution solve(const SdpProblem& problem, const SolveOptions& options);

class SdpProblem {
 public:
  VarHandle add_symmetric_var(const std::string& name, int dim);
  VarHandle add_matrix_var(const std::string& name, int rows, int cols);
  VarHandle add_scalar_var(const std::string& name,
                           double lower = -std::numeric_limits<double>::infinity(),
                           double upper = std::numeric_limits<double>::infinity());

  // Affine expression factories for a declared variable (and its transpose).
  MatExpr var(VarHandle h) const;
  MatExpr var_t(VarHandle h) const;
  // Scalar expression pieces: a single matrix entry, tr(W * V), or a scalar var.
  LinExpr entry(VarHandle h, int row, int col) const;
  LinExpr trace_of(const Matrix& w, VarHandle h) const;
  LinExpr scalar(VarHandle h) const;

  void add_psd_block(const MatExpr& e);   // e >= 0 (PSD), square symmetric
  void add_linear_leq(const LinExpr& e);  // e <= 0
  void add_linear_eq(const LinExpr& e);   // e == 0
  void minimize(const LinExpr& objective);

  int num_vars() const { return static_cast<int>(vars_.size()); }
  const VarInfo& info(VarHandle h) const;
  VarHandle find(const std::string& name) const;

  // Plain-text structural dump (variables, block sizes, constraint counts)
  // for diagnosing dimension mistakes.
  std::string debug_dump() const;

 private:
  friend struct Lowering;
  friend SdpSolution solve(const SdpProblem&, const SolveOptions&);
  void check_handle(VarHandle h) const;
  std::vector<VarInfo> vars_;
  int total_scalars_ = 0;
  std::vector<MatExpr> psd_blocks_;
  std::vector<LinExpr> linear_leq_;
  std::vector<LinExpr> linear_eq_;
  LinExpr objective_;
};

struct SolveOptions {
  double feas_tol = 1e-8;
  double opt_tol = 1e-8;
  // Strictness margin: every PSD block must clear margin * identity.
  double psd_margin = 0.0;
  int max_iters = 120;
  // Optional warm start for the packed scalar vector (see VarInfo offsets).
  // When it is strictly feasible the feasibility phase is skipped.
  std::optional<Vector> initial_x;
};

struct SdpSolution {
  SolveStatus status = SolveStatus::kNumericalFailure;
  double objective_value = std::numeric_limits<double>::quiet_NaN();
  // Worst violation over PSD blocks (negative eigenvalue magnitude) and
  // linear constraints at the returned point.
  double max_constraint_violation = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  std::string message;

  Matrix value(VarHandle h) const;   // matrix variables
  double scalar_value(VarHandle h) const;
  Vector packed;  // full scalar vector (empty unless status == kOptimal)

 private:
  friend struct Lowering;
  friend SdpSolution solve(const SdpProblem&, const SolveOptions&);
  std::vector<VarInfo> var_infos_;
};

SdpSolution solve(const SdpProblem& problem, const SolveOptions& options);
inline SdpSolution solve(const SdpProblem& problem) { return solve(problem, SolveOptions{}); }

}  // namespace secgain::sdp

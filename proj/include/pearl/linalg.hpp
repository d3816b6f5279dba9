#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace pearl {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool square() const noexcept { return rows_ == cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  const std::vector<double>& storage() const noexcept { return data_; }

  DenseMatrix transposed() const;

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---- basic algebra --------------------------------------------------------

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
Vector matvec(const DenseMatrix& a, std::span<const double> x);
Vector matvec_transposed(const DenseMatrix& a, std::span<const double> x);
DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix scaled(const DenseMatrix& a, double s);

double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);
double frobenius_norm(const DenseMatrix& a);
double max_abs(const DenseMatrix& a);
/// max_i sum_j |a_ij|
double inf_norm(const DenseMatrix& a);
/// max |a_ij - a_ji|
double symmetry_defect(const DenseMatrix& a);
bool all_finite(std::span<const double> x);
std::size_t count_nonzeros(const DenseMatrix& a);

/// Returns (a + a^T)/2 when the relative asymmetry is below `tol`, otherwise
/// throws DataError. CG needs exact symmetry.
DenseMatrix symmetrized(const DenseMatrix& a, double tol = 1e-10);

// ---- factorizations -------------------------------------------------------

/// Lower-triangular L with L L^T = a. Throws FactorizationError on a
/// nonpositive pivot and DataError when a is not symmetric within 1e-10.
DenseMatrix cholesky(const DenseMatrix& a);
bool is_positive_definite(const DenseMatrix& a);

Vector solve_lower(const DenseMatrix& l, std::span<const double> b, bool unit_diagonal = false);
Vector solve_upper(const DenseMatrix& u, std::span<const double> b, bool unit_diagonal = false);
/// Solves L^T x = b for lower-triangular L.
Vector solve_lower_transposed(const DenseMatrix& l, std::span<const double> b);
Vector cholesky_solve(const DenseMatrix& l, std::span<const double> b);

/// LU with partial pivoting, P a = L U packed in one matrix.
struct LuFactor {
  DenseMatrix lu;
  std::vector<std::size_t> perm;

  Vector solve(std::span<const double> b) const;
  /// Solves a^T x = b.
  Vector solve_transposed(std::span<const double> b) const;
};
/// Throws FactorizationError on an exactly singular pivot.
LuFactor lu_factor(const DenseMatrix& a);
DenseMatrix inverse(const DenseMatrix& a);

// ---- singular values ------------------------------------------------------

struct SingularTriplet {
  double sigma = 0.0;
  Vector u;
  Vector v;
};

struct ExtremeTriplets {
  SingularTriplet max;
  SingularTriplet min;
};

/// Full SVD; singular values in descending order. Columns of u and v are the
/// left and right singular vectors.
struct Svd {
  Vector sigma;
  DenseMatrix u;
  DenseMatrix v;
};

/// One-sided (Hestenes) Jacobi SVD of a square matrix.
Svd jacobi_svd(const DenseMatrix& p, std::size_t max_sweeps = 80);

struct TripletOptions {
  double tolerance = 1e-10;      // relative Ritz residual
  std::size_t krylov_dim = 32;   // Lanczos basis size per restart
  std::size_t max_restarts = 60;
  std::size_t fallback_max_n = 1024;
};

/// sigma_max via Lanczos on p^T p and sigma_min via Lanczos on (p^T p)^{-1}
/// (LU solves). Falls back to jacobi_svd when either iteration stalls or p is
/// singular, for n <= fallback_max_n; otherwise throws ConvergenceError.
ExtremeTriplets extreme_singular_triplets(const DenseMatrix& p, const TripletOptions& opts = {});

/// sigma_max / sigma_min; +infinity when p is numerically singular.
double condition_number(const DenseMatrix& p);

// ---- conjugate gradients --------------------------------------------------

/// Inverse preconditioner application z = P r.
using LinearOperator = std::function<Vector(const Vector&)>;
/// Called with (k, x_k) for k = 0 .. iterations.
using IterateObserver = std::function<void(std::size_t, const Vector&)>;

struct SolveReport {
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> residual_norms;  // ||r_k||_2, k = 0 .. iterations
  double final_residual = 0.0;
};

enum class SolveStatus { converged, max_iterations, invalid_preconditioner, diverged };

struct SolveResult {
  Vector x;
  SolveReport report;
  SolveStatus status = SolveStatus::max_iterations;
};

/// Non-throwing PCG core: stops early and reports the status when the
/// preconditioner loses positivity (r^T z <= 0) or values become non-finite.
/// Converged iff ||r_k|| <= tolerance * ||b||. An empty operator means identity.
SolveResult pcg_run(const DenseMatrix& a, std::span<const double> b, const LinearOperator& apply_p,
                    std::size_t max_iterations, double tolerance,
                    const IterateObserver& observer = {});

/// Throws DivergenceError / PreconditionerInvalidError instead of returning
/// those statuses.
SolveResult pcg_solve(const DenseMatrix& a, std::span<const double> b,
                      const LinearOperator& apply_p, std::size_t max_iterations,
                      double tolerance, const IterateObserver& observer = {});

SolveResult cg_solve(const DenseMatrix& a, std::span<const double> b, std::size_t max_iterations,
                     double tolerance, const IterateObserver& observer = {});

/// sqrt((x - x*)^T a (x - x*))
double a_norm_error(const DenseMatrix& a, std::span<const double> x,
                    std::span<const double> x_star);

/// z = m r as an operator.
LinearOperator matrix_operator(const DenseMatrix& m);
/// Dense matrix of a linear operator, column j = op(e_j).
DenseMatrix operator_matrix(const LinearOperator& op, std::size_t n);

}  // namespace pearl

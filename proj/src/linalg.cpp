#include "pearl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "pearl/error.hpp"
#include "pearl/kernels.hpp"
#include "pearl/rng.hpp"

namespace pearl {

namespace {

void require_square(const DenseMatrix& a, const char* what) {
  if (!a.square()) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                         std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

void require_length(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw DimensionError(std::string(what) + ": length " + std::to_string(got) +
                         " does not match " + std::to_string(want));
  }
}

}  // namespace

// ---- DenseMatrix ----------------------------------------------------------

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_length(data_.size(), rows * cols, "DenseMatrix");
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require_length(r.size(), cols_, "DenseMatrix row");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> diag) {
  DenseMatrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

// ---- basic algebra --------------------------------------------------------

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  DenseMatrix c(a.rows(), b.cols());
  kernels::gemm(a.rows(), a.cols(), b.cols(), a.data(), b.data(), c.data());
  return c;
}

Vector matvec(const DenseMatrix& a, std::span<const double> x) {
  require_length(x.size(), a.cols(), "matvec");
  Vector y(a.rows());
  kernels::gemv(a.rows(), a.cols(), a.data(), x, y);
  return y;
}

Vector matvec_transposed(const DenseMatrix& a, std::span<const double> x) {
  require_length(x.size(), a.rows(), "matvec_transposed");
  Vector y(a.cols());
  kernels::gemv_t(a.rows(), a.cols(), a.data(), x, y);
  return y;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add: shape mismatch");
  DenseMatrix c = a;
  auto cd = c.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  return c;
}

DenseMatrix scaled(const DenseMatrix& a, double s) {
  DenseMatrix c = a;
  for (double& x : c.data()) x *= s;
  return c;
}

double dot(std::span<const double> x, std::span<const double> y) {
  require_length(y.size(), x.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double frobenius_norm(const DenseMatrix& a) { return norm2(a.data()); }

double max_abs(const DenseMatrix& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

double inf_norm(const DenseMatrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double x : a.row(i)) s += std::abs(x);
    m = std::max(m, s);
  }
  return m;
}

double symmetry_defect(const DenseMatrix& a) {
  require_square(a, "symmetry_defect");
  double d = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) d = std::max(d, std::abs(a(i, j) - a(j, i)));
  return d;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

std::size_t count_nonzeros(const DenseMatrix& a) {
  return static_cast<std::size_t>(
      std::count_if(a.data().begin(), a.data().end(), [](double v) { return v != 0.0; }));
}

DenseMatrix symmetrized(const DenseMatrix& a, double tol) {
  const double defect = symmetry_defect(a);
  if (defect > tol * std::max(1.0, max_abs(a))) {
    throw DataError("matrix is not symmetric (defect " + std::to_string(defect) + ")");
  }
  DenseMatrix s = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      const double m = 0.5 * (a(i, j) + a(j, i));
      s(i, j) = m;
      s(j, i) = m;
    }
  return s;
}

// ---- factorizations -------------------------------------------------------

DenseMatrix cholesky(const DenseMatrix& a_in) {
  require_square(a_in, "cholesky");
  const DenseMatrix a = symmetrized(a_in);
  const std::size_t n = a.rows();
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto lj = l.row(j);
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= lj[k] * lj[k];
    if (!(d > 0.0)) throw FactorizationError("cholesky: matrix is not positive definite", j);
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      const auto li = l.row(i);
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
      l(i, j) = s / ljj;
    }
  }
  return l;
}

bool is_positive_definite(const DenseMatrix& a) {
  try {
    (void)cholesky(a);
    return true;
  } catch (const FactorizationError&) {
    return false;
  } catch (const DataError&) {
    return false;
  }
}

Vector solve_lower(const DenseMatrix& l, std::span<const double> b, bool unit_diagonal) {
  require_square(l, "solve_lower");
  require_length(b.size(), l.rows(), "solve_lower");
  const std::size_t n = l.rows();
  Vector x(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    const auto li = l.row(i);
    double s = x[i];
    for (std::size_t k = 0; k < i; ++k) s -= li[k] * x[k];
    x[i] = unit_diagonal ? s : s / li[i];
  }
  return x;
}

Vector solve_upper(const DenseMatrix& u, std::span<const double> b, bool unit_diagonal) {
  require_square(u, "solve_upper");
  require_length(b.size(), u.rows(), "solve_upper");
  const std::size_t n = u.rows();
  Vector x(b.begin(), b.end());
  for (std::size_t ii = n; ii-- > 0;) {
    const auto ui = u.row(ii);
    double s = x[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= ui[k] * x[k];
    x[ii] = unit_diagonal ? s : s / ui[ii];
  }
  return x;
}

Vector solve_lower_transposed(const DenseMatrix& l, std::span<const double> b) {
  require_square(l, "solve_lower_transposed");
  require_length(b.size(), l.rows(), "solve_lower_transposed");
  const std::size_t n = l.rows();
  Vector x(b.begin(), b.end());
  // Column-oriented back substitution keeps row-major access.
  for (std::size_t ii = n; ii-- > 0;) {
    x[ii] /= l(ii, ii);
    const double xi = x[ii];
    const auto li = l.row(ii);
    for (std::size_t k = 0; k < ii; ++k) x[k] -= li[k] * xi;
  }
  return x;
}

Vector cholesky_solve(const DenseMatrix& l, std::span<const double> b) {
  return solve_lower_transposed(l, solve_lower(l, b));
}

LuFactor lu_factor(const DenseMatrix& a) {
  require_square(a, "lu_factor");
  const std::size_t n = a.rows();
  LuFactor f{a, std::vector<std::size_t>(n)};
  std::iota(f.perm.begin(), f.perm.end(), std::size_t{0});
  DenseMatrix& lu = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    double best = std::abs(lu(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(lu(i, k)) > best) {
        best = std::abs(lu(i, k));
        piv = i;
      }
    }
    if (best == 0.0) throw FactorizationError("lu_factor: matrix is singular", k);
    if (piv != k) {
      std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(piv).begin());
      std::swap(f.perm[k], f.perm[piv]);
    }
    const double inv = 1.0 / lu(k, k);
    const auto rk = lu.row(k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const auto ri = lu.row(i);
      const double factor = ri[k] * inv;
      ri[k] = factor;
      if (factor == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) ri[j] -= factor * rk[j];
    }
  }
  return f;
}

Vector LuFactor::solve(std::span<const double> b) const {
  require_length(b.size(), lu.rows(), "LuFactor::solve");
  Vector pb(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) pb[i] = b[perm[i]];
  return solve_upper(lu, solve_lower(lu, pb, true));
}

Vector LuFactor::solve_transposed(std::span<const double> b) const {
  // a^T = U^T L^T P, so solve U^T y = b, L^T z = y, x = P^T z.
  require_length(b.size(), lu.rows(), "LuFactor::solve_transposed");
  const std::size_t n = lu.rows();
  Vector y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    y[i] /= lu(i, i);
    const double yi = y[i];
    const auto ri = lu.row(i);
    for (std::size_t k = i + 1; k < n; ++k) y[k] -= ri[k] * yi;
  }
  for (std::size_t ii = n; ii-- > 0;) {
    const double zi = y[ii];
    const auto ri = lu.row(ii);
    for (std::size_t k = 0; k < ii; ++k) y[k] -= ri[k] * zi;
  }
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) x[perm[i]] = y[i];
  return x;
}

DenseMatrix inverse(const DenseMatrix& a) {
  const LuFactor f = lu_factor(a);
  const std::size_t n = a.rows();
  DenseMatrix inv(n, n);
  Vector e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const Vector col = f.solve(e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

// ---- singular values ------------------------------------------------------

Svd jacobi_svd(const DenseMatrix& p, std::size_t max_sweeps) {
  require_square(p, "jacobi_svd");
  const std::size_t n = p.rows();
  // Rows of w are the columns of p * V; rows of vt are the columns of V.
  DenseMatrix w = p.transposed();
  DenseMatrix vt = DenseMatrix::identity(n);
  constexpr double kOrthTol = 1e-15;

  bool rotated = true;
  std::size_t sweep = 0;
  for (; rotated && sweep < max_sweeps; ++sweep) {
    rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        auto wi = w.row(i);
        auto wj = w.row(j);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          alpha += wi[k] * wi[k];
          beta += wj[k] * wj[k];
          gamma += wi[k] * wj[k];
        }
        if (gamma == 0.0 || std::abs(gamma) <= kOrthTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < n; ++k) {
          const double xi = wi[k], xj = wj[k];
          wi[k] = c * xi - s * xj;
          wj[k] = s * xi + c * xj;
        }
        auto vi = vt.row(i);
        auto vj = vt.row(j);
        for (std::size_t k = 0; k < n; ++k) {
          const double xi = vi[k], xj = vj[k];
          vi[k] = c * xi - s * xj;
          vj[k] = s * xi + c * xj;
        }
      }
    }
  }
  if (rotated) throw ConvergenceError("jacobi_svd: no convergence", sweep);

  std::vector<double> sig(n);
  for (std::size_t i = 0; i < n; ++i) sig[i] = norm2(w.row(i));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

  Svd out{Vector(n), DenseMatrix(n, n), DenseMatrix(n, n)};
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = order[c];
    out.sigma[c] = sig[src];
    for (std::size_t r = 0; r < n; ++r) {
      out.v(r, c) = vt(src, r);
      out.u(r, c) = sig[src] > 0.0 ? w(src, r) / sig[src] : (r == c ? 1.0 : 0.0);
    }
  }
  return out;
}

namespace {

// Cyclic Jacobi eigen-decomposition of a small symmetric matrix. Eigenvectors
// are returned as columns.
void symmetric_eigen(DenseMatrix a, Vector& values, DenseMatrix& vectors) {
  const std::size_t m = a.rows();
  vectors = DenseMatrix::identity(m);
  double scale = 0.0;
  for (double x : a.data()) scale = std::max(scale, std::abs(x));
  const double floor = 1e-300 + 1e-18 * scale;
  for (std::size_t sweep = 0; sweep < 100; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        const double apq = std::abs(a(p, q));
        if (apq <= floor || apq <= 1e-17 * std::sqrt(std::abs(a(p, p) * a(q, q)))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        rotated = true;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < m; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < m; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < m; ++k) {
          const double vkp = vectors(k, p), vkq = vectors(k, q);
          vectors(k, p) = c * vkp - s * vkq;
          vectors(k, q) = s * vkp + c * vkq;
        }
      }
    }
    if (!rotated) break;
  }
  values.resize(m);
  for (std::size_t i = 0; i < m; ++i) values[i] = a(i, i);
}

struct RitzPair {
  double value = 0.0;
  Vector vec;
  bool converged = false;
};

// Largest eigenpair of a symmetric positive semidefinite operator by Lanczos
// with full reorthogonalisation and explicit restarts from the best Ritz
// vector.
template <class Op>
RitzPair lanczos_largest(const Op& op, std::size_t n, const TripletOptions& opts) {
  Rng rng(0x5eed1234abcdULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector start(n);
  for (double& x : start) x = gauss(rng);

  RitzPair best;
  const std::size_t kmax = std::min(n, std::max<std::size_t>(2, opts.krylov_dim));
  for (std::size_t restart = 0; restart <= opts.max_restarts; ++restart) {
    std::vector<Vector> basis;
    Vector alpha, beta;
    Vector q = start;
    const double qn = norm2(q);
    for (double& x : q) x /= qn;
    for (std::size_t j = 0; j < kmax; ++j) {
      basis.push_back(q);
      Vector w = op(q);
      const double a = dot(w, q);
      for (int pass = 0; pass < 2; ++pass) {
        for (const Vector& b : basis) {
          const double c = dot(w, b);
          for (std::size_t i = 0; i < n; ++i) w[i] -= c * b[i];
        }
      }
      alpha.push_back(a);
      const double bnorm = norm2(w);
      double scale = 0.0;
      for (double x : alpha) scale = std::max(scale, std::abs(x));
      if (j + 1 == kmax || bnorm <= 1e-14 * std::max(scale, 1e-300)) break;
      beta.push_back(bnorm);
      for (std::size_t i = 0; i < n; ++i) w[i] /= bnorm;
      q = std::move(w);
    }
    const std::size_t m = alpha.size();
    DenseMatrix t(m, m);
    for (std::size_t i = 0; i < m; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Vector evals;
    DenseMatrix evecs;
    symmetric_eigen(t, evals, evecs);
    const std::size_t top = static_cast<std::size_t>(
        std::max_element(evals.begin(), evals.end()) - evals.begin());
    Vector y(n, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      const double s = evecs(k, top);
      for (std::size_t i = 0; i < n; ++i) y[i] += s * basis[k][i];
    }
    const double yn = norm2(y);
    for (double& x : y) x /= yn;
    const Vector oy = op(y);
    const double theta = dot(oy, y);
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) res += (oy[i] - theta * y[i]) * (oy[i] - theta * y[i]);
    res = std::sqrt(res);
    best.value = theta;
    best.vec = y;
    if (!std::isfinite(theta)) return best;
    if (res <= opts.tolerance * std::abs(theta)) {
      best.converged = true;
      return best;
    }
    start = std::move(y);
  }
  return best;
}

ExtremeTriplets triplets_from_svd(const DenseMatrix& p) {
  const Svd s = jacobi_svd(p);
  const std::size_t n = p.rows();
  auto column = [n](const DenseMatrix& m, std::size_t c) {
    Vector out(n);
    for (std::size_t r = 0; r < n; ++r) out[r] = m(r, c);
    return out;
  };
  return {{s.sigma.front(), column(s.u, 0), column(s.v, 0)},
          {s.sigma.back(), column(s.u, n - 1), column(s.v, n - 1)}};
}

}  // namespace

ExtremeTriplets extreme_singular_triplets(const DenseMatrix& p, const TripletOptions& opts) {
  require_square(p, "extreme_singular_triplets");
  if (!all_finite(p.data())) throw DataError("extreme_singular_triplets: non-finite entries");
  const std::size_t n = p.rows();
  if (n == 0) throw DimensionError("extreme_singular_triplets: empty matrix");
  if (n == 1) {
    const double s = std::abs(p(0, 0));
    const double sign = p(0, 0) < 0.0 ? -1.0 : 1.0;
    SingularTriplet t{s, {sign}, {1.0}};
    return {t, t};
  }

  auto fallback = [&](std::size_t iterations) {
    if (n > opts.fallback_max_n) {
      throw ConvergenceError("extreme_singular_triplets: Lanczos stalled", iterations);
    }
    return triplets_from_svd(p);
  };

  const auto normal_op = [&p](const Vector& x) { return matvec_transposed(p, matvec(p, x)); };
  const RitzPair top = lanczos_largest(normal_op, n, opts);
  if (!top.converged) return fallback(opts.max_restarts);

  LuFactor lu;
  try {
    lu = lu_factor(p);
  } catch (const FactorizationError&) {
    return fallback(0);
  }
  const auto inverse_op = [&lu](const Vector& x) { return lu.solve(lu.solve_transposed(x)); };
  const RitzPair bottom = lanczos_largest(inverse_op, n, opts);
  if (!bottom.converged || !(bottom.value > 0.0)) return fallback(opts.max_restarts);

  auto triplet = [&p](const Vector& v, double sigma) {
    Vector u = matvec(p, v);
    const double un = norm2(u);
    if (un > 0.0) {
      for (double& x : u) x /= un;
    }
    return SingularTriplet{sigma, std::move(u), v};
  };
  ExtremeTriplets out;
  out.max = triplet(top.vec, norm2(matvec(p, top.vec)));
  out.min = triplet(bottom.vec, norm2(matvec(p, bottom.vec)));
  if (!(out.min.sigma <= out.max.sigma)) out.min.sigma = out.max.sigma;
  return out;
}

double condition_number(const DenseMatrix& p) {
  const ExtremeTriplets t = extreme_singular_triplets(p);
  const double eps = std::numeric_limits<double>::epsilon();
  if (t.min.sigma <= t.max.sigma * eps * static_cast<double>(p.rows()) || t.min.sigma == 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return t.max.sigma / t.min.sigma;
}

// ---- conjugate gradients --------------------------------------------------

SolveResult pcg_run(const DenseMatrix& a, std::span<const double> b, const LinearOperator& apply_p,
                    std::size_t max_iterations, double tolerance, const IterateObserver& observer) {
  require_square(a, "pcg");
  require_length(b.size(), a.rows(), "pcg");
  if (!(tolerance > 0.0)) throw UsageError("pcg: tolerance must be positive");
  const std::size_t n = a.rows();

  SolveResult out;
  out.x.assign(n, 0.0);
  Vector r(b.begin(), b.end());
  SolveReport& rep = out.report;
  const double bnorm = norm2(b);
  const double target = tolerance * bnorm;
  double rnorm = bnorm;
  rep.residual_norms.push_back(rnorm);
  rep.final_residual = rnorm;
  if (observer) observer(0, out.x);

  auto finish = [&](SolveStatus s) {
    out.status = s;
    rep.converged = s == SolveStatus::converged;
    rep.final_residual = rep.residual_norms.back();
    return out;
  };

  if (rnorm <= target) return finish(SolveStatus::converged);

  Vector z = apply_p ? apply_p(r) : r;
  double rz = dot(r, z);
  if (!std::isfinite(rz)) return finish(SolveStatus::diverged);
  if (rz <= 0.0) return finish(SolveStatus::invalid_preconditioner);
  Vector p = z;
  Vector q(n);

  for (std::size_t k = 1; k <= max_iterations; ++k) {
    kernels::gemv(n, n, a.data(), p, q);
    const double pq = dot(p, q);
    if (!std::isfinite(pq) || pq <= 0.0) return finish(SolveStatus::diverged);
    const double step = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      out.x[i] += step * p[i];
      r[i] -= step * q[i];
    }
    rnorm = norm2(r);
    rep.iterations = k;
    rep.residual_norms.push_back(rnorm);
    if (!std::isfinite(rnorm)) return finish(SolveStatus::diverged);
    if (observer) observer(k, out.x);
    if (rnorm <= target) return finish(SolveStatus::converged);
    if (k == max_iterations) break;

    z = apply_p ? apply_p(r) : r;
    const double rz_next = dot(r, z);
    if (!std::isfinite(rz_next)) return finish(SolveStatus::diverged);
    if (rz_next <= 0.0) return finish(SolveStatus::invalid_preconditioner);
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return finish(SolveStatus::max_iterations);
}

SolveResult pcg_solve(const DenseMatrix& a, std::span<const double> b,
                      const LinearOperator& apply_p, std::size_t max_iterations, double tolerance,
                      const IterateObserver& observer) {
  SolveResult res = pcg_run(a, b, apply_p, max_iterations, tolerance, observer);
  if (res.status == SolveStatus::diverged) {
    throw DivergenceError("pcg: non-finite or non-positive curvature", res.report.iterations);
  }
  if (res.status == SolveStatus::invalid_preconditioner) {
    throw PreconditionerInvalidError("pcg: preconditioner is not positive definite (r'z <= 0)",
                                     res.report.iterations);
  }
  return res;
}

SolveResult cg_solve(const DenseMatrix& a, std::span<const double> b, std::size_t max_iterations,
                     double tolerance, const IterateObserver& observer) {
  return pcg_solve(a, b, LinearOperator{}, max_iterations, tolerance, observer);
}

double a_norm_error(const DenseMatrix& a, std::span<const double> x,
                    std::span<const double> x_star) {
  require_length(x.size(), a.cols(), "a_norm_error");
  require_length(x_star.size(), a.cols(), "a_norm_error");
  Vector d(x.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = x[i] - x_star[i];
  const double q = dot(d, matvec(a, d));
  if (q < 0.0) {
    const double scale = max_abs(a) * dot(d, d) * static_cast<double>(d.size());
    if (-q > 1e-13 * scale) {
      throw NumericalError("a_norm_error: negative quadratic form " + std::to_string(q));
    }
    return 0.0;
  }
  return std::sqrt(q);
}

LinearOperator matrix_operator(const DenseMatrix& m) {
  return [m](const Vector& r) { return matvec(m, r); };
}

DenseMatrix operator_matrix(const LinearOperator& op, std::size_t n) {
  DenseMatrix out(n, n);
  Vector e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const Vector col = op ? op(e) : e;
    e[j] = 0.0;
    for (std::size_t i = 0; i < n; ++i) out(i, j) = col[i];
  }
  return out;
}

}  // namespace pearl

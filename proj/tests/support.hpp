#pragma once

// Independent reference routines for the tests. Nothing here calls into the
// library's numerical code.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "pearl/linalg.hpp"
#include "pearl/rng.hpp"

namespace pearl::testing {

inline DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

inline DenseMatrix naive_transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  DenseMatrix m(r, c);
  for (double& x : m.data()) x = u(rng);
  return m;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix. Returns the
/// eigenvalues (unsorted) and writes eigenvectors as columns of `vecs`.
inline std::vector<double> jacobi_eigen(DenseMatrix a, DenseMatrix* vecs = nullptr) {
  const std::size_t n = a.rows();
  DenseMatrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        total += a(i, j) * a(i, j);
        if (i != j) off += a(i, j) * a(i, j);
      }
    if (off <= 1e-30 * total) break;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  if (vecs) *vecs = v;
  return ev;
}

/// Singular values (descending) from the eigenvalues of [[0, P], [P^T, 0]],
/// which are +/- sigma_i.
inline std::vector<double> oracle_singular_values(const DenseMatrix& p) {
  const std::size_t n = p.rows();
  DenseMatrix h(2 * n, 2 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      h(i, n + j) = p(i, j);
      h(n + j, i) = p(i, j);
    }
  std::vector<double> ev = jacobi_eigen(h);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  ev.resize(n);
  return ev;
}

/// Q diag(eig) Q^T with eigenvalues log-spaced in [1, kappa].
inline DenseMatrix random_spd(std::size_t n, double kappa, Rng& rng) {
  DenseMatrix q = random_matrix(n, n, rng);
  // Gram-Schmidt
  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t k = 0; k < j; ++k) {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += q(i, j) * q(i, k);
        for (std::size_t i = 0; i < n; ++i) q(i, j) -= d * q(i, k);
      }
    double nn = 0.0;
    for (std::size_t i = 0; i < n; ++i) nn += q(i, j) * q(i, j);
    nn = std::sqrt(nn);
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= nn;
  }
  std::vector<double> lam(n);
  for (std::size_t i = 0; i < n; ++i)
    lam[i] = n == 1 ? 1.0 : std::pow(kappa, static_cast<double>(i) / static_cast<double>(n - 1));
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += q(i, k) * lam[k] * q(j, k);
      a(i, j) = a(j, i) = s;
    }
  return a;
}

/// Textbook PCG with z = P r given as an explicit matrix. Returns the
/// residual norms ||r_k||, k = 0 .. iterations.
inline std::vector<double> textbook_pcg(const DenseMatrix& a, const std::vector<double>& b,
                                        const DenseMatrix& p, std::size_t max_it, double tol,
                                        std::vector<double>* x_out = nullptr) {
  const std::size_t n = b.size();
  auto mv = [n](const DenseMatrix& m, const std::vector<double>& v) {
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) y[i] += m(i, j) * v[j];
    return y;
  };
  auto dotp = [n](const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += u[i] * v[i];
    return s;
  };
  std::vector<double> x(n, 0.0), r = b, z = mv(p, r), d = z;
  const double bnorm = std::sqrt(dotp(b, b));
  std::vector<double> norms{std::sqrt(dotp(r, r))};
  double rz = dotp(r, z);
  for (std::size_t k = 0; k < max_it && norms.back() > tol * bnorm; ++k) {
    const std::vector<double> q = mv(a, d);
    const double alpha = rz / dotp(d, q);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * d[i];
      r[i] -= alpha * q[i];
    }
    norms.push_back(std::sqrt(dotp(r, r)));
    z = mv(p, r);
    const double rz_new = dotp(r, z);
    for (std::size_t i = 0; i < n; ++i) d[i] = z[i] + (rz_new / rz) * d[i];
    rz = rz_new;
  }
  if (x_out) *x_out = x;
  return norms;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-12});
}

}  // namespace pearl::testing

#include "pearl/baselines.hpp"

#include <cmath>

#include "pearl/error.hpp"

namespace pearl {

std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::none: return "none";
    case BaselineKind::jacobi: return "jacobi";
    case BaselineKind::ilu0: return "ilu0";
    case BaselineKind::ic0: return "ic0";
  }
  return "none";
}

BaselineKind parse_baseline(const std::string& s) {
  if (s == "none") return BaselineKind::none;
  if (s == "jacobi") return BaselineKind::jacobi;
  if (s == "ilu0" || s == "ilu") return BaselineKind::ilu0;
  if (s == "ic0" || s == "ic") return BaselineKind::ic0;
  throw UsageError("unknown baseline '" + s + "' (none, jacobi, ilu0, ic0)");
}

namespace {

// Returns the failing pivot, or n on success.
std::size_t try_ic0(const DenseMatrix& a, double shift, DenseMatrix& l) {
  const std::size_t n = a.rows();
  l = DenseMatrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) l(i, j) = a(i, j);
  for (std::size_t i = 0; i < n; ++i) l(i, i) *= 1.0 + shift;

  for (std::size_t k = 0; k < n; ++k) {
    const double d = l(k, k);
    if (!(d > 0.0) || !std::isfinite(d)) return k;
    const double lkk = std::sqrt(d);
    l(k, k) = lkk;
    for (std::size_t i = k + 1; i < n; ++i)
      if (a(i, k) != 0.0) l(i, k) /= lkk;
    for (std::size_t j = k + 1; j < n; ++j) {
      if (a(j, k) == 0.0) continue;
      const double ljk = l(j, k);
      for (std::size_t i = j; i < n; ++i) {
        if (a(i, j) != 0.0 && a(i, k) != 0.0) l(i, j) -= l(i, k) * ljk;
      }
    }
  }
  return n;
}

}  // namespace

DenseMatrix ic0(const DenseMatrix& a_in, bool* shifted) {
  if (!a_in.square()) throw DimensionError("ic0: expected a square matrix");
  const DenseMatrix a = symmetrized(a_in);
  DenseMatrix l;
  std::size_t pivot = try_ic0(a, 0.0, l);
  if (shifted) *shifted = false;
  if (pivot == a.rows()) return l;
  pivot = try_ic0(a, 1e-8, l);
  if (pivot == a.rows()) {
    if (shifted) *shifted = true;
    return l;
  }
  throw FactorizationError("ic0: breakdown after diagonal shift", pivot);
}

DenseMatrix ilu0(const DenseMatrix& a) {
  if (!a.square()) throw DimensionError("ilu0: expected a square matrix");
  const std::size_t n = a.rows();
  DenseMatrix w = a;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) {
      if (a(i, k) == 0.0) continue;
      const double pivot = w(k, k);
      if (pivot == 0.0 || !std::isfinite(pivot)) throw FactorizationError("ilu0: zero pivot", k);
      const double f = w(i, k) / pivot;
      w(i, k) = f;
      for (std::size_t j = k + 1; j < n; ++j)
        if (a(i, j) != 0.0) w(i, j) -= f * w(k, j);
    }
    if (w(i, i) == 0.0 || !std::isfinite(w(i, i))) throw FactorizationError("ilu0: zero pivot", i);
  }
  return w;
}

Vector Baseline::apply(const Vector& r) const {
  switch (kind) {
    case BaselineKind::none: return r;
    case BaselineKind::jacobi: {
      Vector z(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) z[i] = inv_diag[i] * r[i];
      return z;
    }
    case BaselineKind::ic0: return cholesky_solve(lower, r);
    case BaselineKind::ilu0: return solve_upper(upper, solve_lower(lower, r, true));
  }
  return r;
}

LinearOperator Baseline::op() const {
  if (kind == BaselineKind::none) return {};
  return [self = *this](const Vector& r) { return self.apply(r); };
}

Baseline build_baseline(BaselineKind kind, const DenseMatrix& a) {
  if (!a.square()) throw DimensionError("build_baseline: expected a square matrix");
  const std::size_t n = a.rows();
  Baseline b;
  b.kind = kind;
  switch (kind) {
    case BaselineKind::none: break;
    case BaselineKind::jacobi:
      b.inv_diag.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(a(i, i) > 0.0)) throw FactorizationError("jacobi: nonpositive diagonal", i);
        b.inv_diag[i] = 1.0 / a(i, i);
      }
      break;
    case BaselineKind::ic0: b.lower = ic0(a, &b.shifted); break;
    case BaselineKind::ilu0: {
      const DenseMatrix w = ilu0(a);
      b.lower = DenseMatrix(n, n);
      b.upper = DenseMatrix(n, n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) b.lower(i, j) = w(i, j);
        b.lower(i, i) = 1.0;
        for (std::size_t j = i; j < n; ++j) b.upper(i, j) = w(i, j);
      }
      break;
    }
  }
  return b;
}

}  // namespace pearl

#pragma once

// Classical preconditioners behind the PCG operator interface.
//
// ilu0/ic0 are zero-fill (level 0) factorizations on the nonzero pattern of
// a. A dense pattern therefore gives the complete factorization.

#include <string>

#include "pearl/linalg.hpp"

namespace pearl {

enum class BaselineKind { none, jacobi, ilu0, ic0 };

std::string to_string(BaselineKind k);
BaselineKind parse_baseline(const std::string& s);

struct Baseline {
  BaselineKind kind = BaselineKind::none;
  Vector inv_diag;    // jacobi
  DenseMatrix lower;  // ic0: L; ilu0: unit-lower L (diagonal not stored)
  DenseMatrix upper;  // ilu0: U
  bool shifted = false;  // ic0 needed the 1e-8 diagonal shift

  Vector apply(const Vector& r) const;
  LinearOperator op() const;
};

/// IC(0): L with L L^T matching a on its lower pattern. A nonpositive pivot
/// triggers one retry on a + 1e-8 diag(a); a second failure throws
/// FactorizationError with the pivot index.
DenseMatrix ic0(const DenseMatrix& a, bool* shifted = nullptr);
/// ILU(0) packed as L (unit lower, below the diagonal) and U (upper).
DenseMatrix ilu0(const DenseMatrix& a);

Baseline build_baseline(BaselineKind kind, const DenseMatrix& a);

}  // namespace pearl

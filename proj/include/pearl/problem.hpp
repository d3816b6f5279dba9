#pragma once

// Variable-coefficient 2D diffusion systems on the unit square.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pearl/linalg.hpp"
#include "pearl/rng.hpp"

namespace pearl {

struct Bump {
  double amplitude = 0.0;
  double x = 0.0;
  double y = 0.0;
  double width = 0.0;
};

/// a(x, y) = 1 + sum of Gaussian bumps.
struct BumpField {
  std::vector<Bump> bumps;
};

struct ProblemConfig {
  std::size_t grid = 10;
  int bumps_min = 3;
  int bumps_max = 10;
  double amplitude_min = 0.1;
  double amplitude_max = 5.0;
  double width_min = 0.05;
  double width_max = 0.25;
  // Upper bound of the U(0, m) noise added to each nonzero of A. Absolute,
  // i.e. in the same units as A (which carries the 1/h^2 factor).
  double perturb_mag = 1.0;
  int spd_retries = 16;
  double rhs_mean = 0.0;
  double rhs_std = 1.0;

  void validate() const;
};

struct LinearSystem {
  DenseMatrix a;
  Vector b;
  std::size_t grid = 0;
  double perturb_mag = 0.0;
  std::uint64_t seed = 0;
  BumpField field;  // empty when loaded from a file

  std::size_t n() const { return a.rows(); }
};

struct Dataset {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::vector<LinearSystem> systems;
  std::uint32_t version = kFormatVersion;
  std::uint64_t seed = 0;
};

BumpField sample_bump_field(Rng& rng, const ProblemConfig& config);
double eval_coefficient(const BumpField& field, double x, double y);

/// 5-point finite-difference matrix of -div(a grad u) on a grid x grid interior
/// mesh, h = 1/(grid+1), Dirichlet boundary, face coefficient = mean of the two
/// adjacent node values. Unknown (i, j) sits at ((i+1)h, (j+1)h), row j*grid+i.
DenseMatrix discretize(const BumpField& field, std::size_t grid);

/// a + dA where dA_ij ~ U(0, m) on the nonzeros of a, drawn on the upper
/// triangle and mirrored. Redraws until the result is SPD, up to `retries`
/// attempts, then throws DataError.
DenseMatrix perturb(const DenseMatrix& a, double m, Rng& rng, int retries = 16);

Vector sample_rhs(std::size_t n, Rng& rng, double mean = 0.0, double std_dev = 1.0);

/// One system from its own seed: bump field, discretize, perturb, rhs.
LinearSystem generate_system(const ProblemConfig& config, std::uint64_t system_seed);

/// System i uses seed derive_seed(seed, Stream::dataset, i), so the output
/// does not depend on thread count.
Dataset generate_dataset(const ProblemConfig& config, std::size_t count, std::uint64_t seed);

void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);
std::string serialize_dataset(const Dataset& dataset);
Dataset deserialize_dataset(const std::string& bytes);

/// FNV-1a over the raw bytes of a matrix, for round-trip checks.
std::uint64_t matrix_checksum(const DenseMatrix& a);

}  // namespace pearl

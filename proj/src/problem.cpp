#include "pearl/problem.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <iterator>
#include <sstream>

#include "binio.hpp"
#include "pearl/error.hpp"

namespace pearl {

namespace binio {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace binio

void ProblemConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw UsageError(std::string("problem config: ") + what);
  };
  check(grid >= 2, "grid must be >= 2");
  check(bumps_min >= 0 && bumps_min <= bumps_max, "bump count range");
  check(amplitude_min <= amplitude_max, "amplitude range");
  check(width_min > 0.0 && width_min <= width_max, "width range");
  check(perturb_mag >= 0.0, "perturbation magnitude must be >= 0");
  check(spd_retries >= 1, "spd retries must be >= 1");
  check(rhs_std > 0.0, "rhs std must be > 0");
}

BumpField sample_bump_field(Rng& rng, const ProblemConfig& config) {
  std::uniform_int_distribution<int> count(config.bumps_min, config.bumps_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int nb = count(rng);
  BumpField f;
  f.bumps.reserve(static_cast<std::size_t>(nb));
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  for (int i = 0; i < nb; ++i) {
    Bump b;
    b.amplitude = between(config.amplitude_min, config.amplitude_max);
    b.x = unit(rng);
    b.y = unit(rng);
    b.width = between(config.width_min, config.width_max);
    f.bumps.push_back(b);
  }
  return f;
}

double eval_coefficient(const BumpField& field, double x, double y) {
  double a = 1.0;
  for (const Bump& b : field.bumps) {
    const double dx = x - b.x, dy = y - b.y;
    a += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.width * b.width));
  }
  return a;
}

DenseMatrix discretize(const BumpField& field, std::size_t grid) {
  if (grid < 2) throw UsageError("discretize: grid must be >= 2");
  const std::size_t g = grid;
  const std::size_t n = g * g;
  const double h = 1.0 / static_cast<double>(g + 1);
  const double inv_h2 = 1.0 / (h * h);

  // Coefficient on the (g+2)^2 mesh including boundary points.
  std::vector<double> coef((g + 2) * (g + 2));
  for (std::size_t j = 0; j < g + 2; ++j)
    for (std::size_t i = 0; i < g + 2; ++i)
      coef[j * (g + 2) + i] =
          eval_coefficient(field, static_cast<double>(i) * h, static_cast<double>(j) * h);
  auto c = [&](std::size_t i, std::size_t j) { return coef[j * (g + 2) + i]; };

  DenseMatrix a(n, n);
  for (std::size_t j = 0; j < g; ++j) {
    for (std::size_t i = 0; i < g; ++i) {
      const std::size_t row = j * g + i;
      const std::size_t mi = i + 1, mj = j + 1;  // mesh indices
      const double center = c(mi, mj);
      const double west = 0.5 * (center + c(mi - 1, mj));
      const double east = 0.5 * (center + c(mi + 1, mj));
      const double south = 0.5 * (center + c(mi, mj - 1));
      const double north = 0.5 * (center + c(mi, mj + 1));
      a(row, row) = (west + east + south + north) * inv_h2;
      if (i > 0) a(row, row - 1) = -west * inv_h2;
      if (i + 1 < g) a(row, row + 1) = -east * inv_h2;
      if (j > 0) a(row, row - g) = -south * inv_h2;
      if (j + 1 < g) a(row, row + g) = -north * inv_h2;
    }
  }
  return a;
}

DenseMatrix perturb(const DenseMatrix& a, double m, Rng& rng, int retries) {
  if (!a.square()) throw DimensionError("perturb: expected a square matrix");
  if (!(m >= 0.0)) throw UsageError("perturb: magnitude must be >= 0");
  if (m == 0.0) return a;
  std::uniform_real_distribution<double> noise(0.0, m);
  const std::size_t n = a.rows();
  for (int attempt = 0; attempt < retries; ++attempt) {
    DenseMatrix out = a;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        if (a(i, j) == 0.0) continue;
        const double d = noise(rng);
        out(i, j) += d;
        if (j != i) out(j, i) = a(j, i) + d;
      }
    }
    if (is_positive_definite(out)) return out;
  }
  throw DataError("perturb: no SPD sample after " + std::to_string(retries) + " attempts (m = " +
                  std::to_string(m) + ")");
}

Vector sample_rhs(std::size_t n, Rng& rng, double mean, double std_dev) {
  if (n == 0) throw UsageError("sample_rhs: n must be >= 1");
  std::normal_distribution<double> gauss(mean, std_dev);
  Vector b(n);
  for (double& x : b) x = gauss(rng);
  return b;
}

LinearSystem generate_system(const ProblemConfig& config, std::uint64_t system_seed) {
  config.validate();
  Rng rng = stream_rng(system_seed, Stream::system, 0);
  LinearSystem s;
  s.field = sample_bump_field(rng, config);
  s.a = perturb(discretize(s.field, config.grid), config.perturb_mag, rng, config.spd_retries);
  s.b = sample_rhs(s.a.rows(), rng, config.rhs_mean, config.rhs_std);
  s.grid = config.grid;
  s.perturb_mag = config.perturb_mag;
  s.seed = system_seed;
  return s;
}

Dataset generate_dataset(const ProblemConfig& config, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw UsageError("generate_dataset: count must be >= 1");
  config.validate();
  Dataset ds;
  ds.seed = seed;
  ds.systems.resize(count);
  std::exception_ptr failure;
  const auto total = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < total; ++i) {
    try {
      ds.systems[static_cast<std::size_t>(i)] =
          generate_system(config, derive_seed(seed, Stream::dataset, static_cast<std::uint64_t>(i)));
    } catch (...) {
#pragma omp critical(pearl_generate_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return ds;
}

namespace {
constexpr char kDatasetMagic[8] = {'P', 'E', 'A', 'R', 'L', 'D', 'S', '1'};
}

std::string serialize_dataset(const Dataset& dataset) {
  binio::Writer w;
  w.put_bytes({kDatasetMagic, 8});
  w.put<std::uint32_t>(dataset.version);
  w.put<std::uint64_t>(dataset.systems.size());
  for (const LinearSystem& s : dataset.systems) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.grid));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.n()));
    w.put<double>(s.perturb_mag);
    w.put<std::uint64_t>(s.seed);
    w.put_doubles(s.a.data());
    w.put_doubles(s.b);
  }
  return std::move(w.str());
}

Dataset deserialize_dataset(const std::string& bytes) {
  binio::Reader r(bytes);
  if (r.get_bytes(8) != std::string_view(kDatasetMagic, 8)) throw DataError("not a PEARLDS1 dataset");
  Dataset ds;
  ds.version = r.get<std::uint32_t>();
  if (ds.version != Dataset::kFormatVersion) {
    throw DataError("unsupported dataset version " + std::to_string(ds.version));
  }
  const auto count = r.get<std::uint64_t>();
  if (count == 0) throw DataError("dataset is empty");
  for (std::uint64_t k = 0; k < count; ++k) {
    LinearSystem s;
    s.grid = r.get<std::uint32_t>();
    const std::size_t n = r.get<std::uint32_t>();
    if (n != s.grid * s.grid) throw DataError("dataset system " + std::to_string(k) + ": n != grid^2");
    s.perturb_mag = r.get<double>();
    s.seed = r.get<std::uint64_t>();
    std::vector<double> data(n * n);
    r.get_doubles(data);
    s.a = DenseMatrix(n, n, std::move(data));
    s.b.resize(n);
    r.get_doubles(s.b);
    if (!all_finite(s.a.data()) || !all_finite(s.b)) {
      throw DataError("dataset system " + std::to_string(k) + ": non-finite values");
    }
    ds.systems.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw DataError("trailing bytes after dataset");
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  binio::write_file(path.string(), serialize_dataset(dataset));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return deserialize_dataset(binio::read_file(path.string()));
}

std::uint64_t matrix_checksum(const DenseMatrix& a) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(a.data().data());
  for (std::size_t i = 0; i < a.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace pearl

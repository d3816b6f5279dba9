#include "pearl/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

namespace pearl::kernels {

namespace {
// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1 << 15;
constexpr std::size_t kColumnBlock = 256;
}  // namespace

int max_threads() { return omp_get_max_threads(); }

namespace serial {

void gemv(std::size_t rows, std::size_t cols, std::span<const double> a,
          std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = a.data() + i * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
    y[i] = s;
  }
}

void gemv_t(std::size_t rows, std::size_t cols, std::span<const double> a,
            std::span<const double> x, std::span<double> y) {
  std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(cols), 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = a.data() + i * cols;
    const double xi = x[i];
    for (std::size_t j = 0; j < cols; ++j) y[j] += row[j] * xi;
  }
}

void ger(std::size_t rows, std::size_t cols, double alpha, std::span<const double> x,
         std::span<const double> y, std::span<double> a) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double s = alpha * x[i];
    if (s == 0.0) continue;
    double* row = a.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += s * y[j];
  }
}

void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void adam(const AdamParams& p, std::span<const double> grad, std::span<double> m,
          std::span<double> v, std::span<double> param) {
  const std::size_t size = param.size();
  for (std::size_t i = 0; i < size; ++i) {
    const double g = grad[i];
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
    param[i] -= p.lr * (m[i] / p.bias1) / (std::sqrt(v[i] / p.bias2) + p.eps);
  }
}

}  // namespace serial

namespace parallel {

void gemv(std::size_t rows, std::size_t cols, std::span<const double> a,
          std::span<const double> x, std::span<double> y) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double* row = a.data() + static_cast<std::size_t>(i) * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
    y[static_cast<std::size_t>(i)] = s;
  }
}

void gemv_t(std::size_t rows, std::size_t cols, std::span<const double> a,
            std::span<const double> x, std::span<double> y) {
  const auto blocks = static_cast<std::ptrdiff_t>((cols + kColumnBlock - 1) / kColumnBlock);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const std::size_t j0 = static_cast<std::size_t>(blk) * kColumnBlock;
    const std::size_t j1 = std::min(cols, j0 + kColumnBlock);
    double* out = y.data();
    std::fill(out + j0, out + j1, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* row = a.data() + i * cols;
      const double xi = x[i];
      for (std::size_t j = j0; j < j1; ++j) out[j] += row[j] * xi;
    }
  }
}

void ger(std::size_t rows, std::size_t cols, double alpha, std::span<const double> x,
         std::span<const double> y, std::span<double> a) {
  const auto n = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const double s = alpha * x[static_cast<std::size_t>(i)];
    if (s == 0.0) continue;
    double* row = a.data() + static_cast<std::size_t>(i) * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += s * y[j];
  }
}

void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c.data() + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void adam(const AdamParams& p, std::span<const double> grad, std::span<double> m,
          std::span<double> v, std::span<double> param) {
  const auto size = static_cast<std::ptrdiff_t>(param.size());
#pragma omp parallel for schedule(static) if (param.size() > kParallelWork)
  for (std::ptrdiff_t ii = 0; ii < size; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double g = grad[i];
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
    param[i] -= p.lr * (m[i] / p.bias1) / (std::sqrt(v[i] / p.bias2) + p.eps);
  }
}

}  // namespace parallel

}  // namespace pearl::kernels

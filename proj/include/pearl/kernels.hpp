#pragma once

// Dense row-major kernels used by the solvers and the networks.
//
// Two implementations share each signature: `serial` is the plain reference
// kept for testing and benchmarking, `parallel` is the OpenMP version the
// library calls. Every parallel loop partitions output entries, and each
// output is accumulated in the same order as the serial loop, so both produce
// bit-identical results for any thread count.

#include <cstddef>
#include <span>

namespace pearl::kernels {

struct AdamParams {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias1;  // 1 - beta1^t
  double bias2;  // 1 - beta2^t
};

namespace serial {
// y = A x, A is rows x cols
void gemv(std::size_t rows, std::size_t cols, std::span<const double> a,
          std::span<const double> x, std::span<double> y);
// y = A^T x
void gemv_t(std::size_t rows, std::size_t cols, std::span<const double> a,
            std::span<const double> x, std::span<double> y);
// A += alpha x y^T
void ger(std::size_t rows, std::size_t cols, double alpha, std::span<const double> x,
         std::span<const double> y, std::span<double> a);
// C = A B, A is m x k, B is k x n
void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c);
void adam(const AdamParams& p, std::span<const double> grad, std::span<double> m,
          std::span<double> v, std::span<double> param);
}  // namespace serial

namespace parallel {
void gemv(std::size_t rows, std::size_t cols, std::span<const double> a,
          std::span<const double> x, std::span<double> y);
void gemv_t(std::size_t rows, std::size_t cols, std::span<const double> a,
            std::span<const double> x, std::span<double> y);
void ger(std::size_t rows, std::size_t cols, double alpha, std::span<const double> x,
         std::span<const double> y, std::span<double> a);
void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c);
void adam(const AdamParams& p, std::span<const double> grad, std::span<double> m,
          std::span<double> v, std::span<double> param);
}  // namespace parallel

using parallel::adam;
using parallel::gemm;
using parallel::gemv;
using parallel::gemv_t;
using parallel::ger;

int max_threads();

}  // namespace pearl::kernels

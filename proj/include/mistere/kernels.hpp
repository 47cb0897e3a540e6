#pragma once

#include <cstddef>
#include <span>

// Dense matrix-product kernels used by the autodiff engine.
//
// Every kernel exists twice: a serial reference in `kernels::serial` and an
// OpenMP version in `kernels`. The parallel versions split work over output
// rows only, so each output element is accumulated by one thread in the same
// order as the reference; results are bitwise identical for any thread count.
//
// All matrices are row-major. Outputs are overwritten, not accumulated, unless
// the name says `_acc`.

namespace mistere::kernels {

/// Work (M*K*N) below which the parallel entry points run serially.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace serial {

/// c[M x N] = a[M x K] * b[K x N]
void matmul(std::span<const double> a, std::span<const double> b,
            std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

/// c[M x N] += a[M x K] * b[N x K]^T
void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);

/// c[K x N] += a[M x K]^T * b[M x N]
void matmul_at_b_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);

}  // namespace serial

void matmul(std::span<const double> a, std::span<const double> b,
            std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);
void matmul_at_b_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n);

/// Number of threads the parallel kernels may use (1 without OpenMP).
int max_threads();

}  // namespace mistere::kernels

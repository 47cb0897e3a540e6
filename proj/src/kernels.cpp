#include "mistere/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mistere::kernels {

namespace {

// Row kernels shared by both implementations; the summation order inside a
// row is what makes serial and parallel results identical.

inline void matmul_row(const double* a, const double* b, double* c,
                       std::size_t k, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void a_bt_row(const double* a, const double* b, double* c,
                     std::size_t k, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a[p] * brow[p];
    c[j] += s;
  }
}

// Row `p` of a^T b: sum over i of a[i][p] * b[i][:]
inline void at_b_row(const double* a, const double* b, double* c,
                     std::size_t p, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double av = a[i * k + p];
    if (av == 0.0) continue;
    const double* brow = b + i * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

bool worth_parallel(std::size_t m, std::size_t k, std::size_t n) {
  return m * k * n >= kParallelThreshold && max_threads() > 1;
}

}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b,
            std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
  }
}

void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    a_bt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
  }
}

void matmul_at_b_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    at_b_row(a.data(), b.data(), c.data() + p * n, p, m, k, n);
  }
}

}  // namespace serial

void matmul(std::span<const double> a, std::span<const double> b,
            std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  if (!worth_parallel(m, k, n)) return serial::matmul(a, b, c, m, k, n);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
  }
}

void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  if (!worth_parallel(m, k, n)) return serial::matmul_a_bt_acc(a, b, c, m, k, n);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    a_bt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
  }
}

void matmul_at_b_acc(std::span<const double> a, std::span<const double> b,
                     std::span<double> c, std::size_t m, std::size_t k,
                     std::size_t n) {
  if (!worth_parallel(m, k, n)) return serial::matmul_at_b_acc(a, b, c, m, k, n);
  const auto rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < rows; ++p) {
    at_b_row(a.data(), b.data(), c.data() + p * n, static_cast<std::size_t>(p),
             m, k, n);
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace mistere::kernels

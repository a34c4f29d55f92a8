#include "kernels.hpp"

#include <algorithm>
#include <vector>

#include "cmet/parallel.hpp"

namespace cmet::diff::kernels {

namespace {

constexpr std::size_t kParallelWork = std::size_t{1} << 20;

// Rows [r0, r1) of C = A * B, four rows at a time so each B row is loaded once
// per group.
void nn_rows(std::size_t r0, std::size_t r1, std::size_t k, std::size_t n,
             const double* __restrict a, const double* __restrict b, double* __restrict c,
             bool accumulate) {
  std::size_t i = r0;
  for (; i + 4 <= r1; i += 4) {
    double* __restrict c0 = c + i * n;
    double* __restrict c1 = c0 + n;
    double* __restrict c2 = c1 + n;
    double* __restrict c3 = c2 + n;
    if (!accumulate) {
      std::fill(c0, c0 + 4 * n, 0.0);
    }
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* __restrict bp = b + p * n;
      const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      for (std::size_t j = 0; j < n; ++j) {
        const double bj = bp[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < r1; ++i) {
    double* __restrict ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* __restrict bp = b + p * n;
      const double v = ai[p];
      for (std::size_t j = 0; j < n; ++j) ci[j] += v * bp[j];
    }
  }
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

void run_rows(std::size_t m, std::size_t work, const std::function<void(std::size_t, std::size_t)>& f) {
  if (work < kParallelWork || m < 8) {
    f(0, m);
    return;
  }
  parallel_for_range(m, 16, f);
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  run_rows(m, m * k * n, [&](std::size_t r0, std::size_t r1) { nn_rows(r0, r1, k, n, a, b, c, accumulate); });
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> bt(k * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, k, n, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> at(k * m);
  transpose(m, k, a, at.data());
  gemm_nn(k, m, n, at.data(), b, c, accumulate);
}

}  // namespace cmet::diff::kernels

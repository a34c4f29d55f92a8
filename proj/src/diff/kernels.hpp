#pragma once

#include <cstddef>

namespace cmet::diff::kernels {

// Dense row-major products. Every output element is accumulated over the inner
// index in ascending order, whichever way the rows are split across workers,
// so results are bitwise independent of the worker count.

/// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate);

/// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate);

/// C[k,n] (+)= A[m,k]^T * B[m,n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate);

}  // namespace cmet::diff::kernels

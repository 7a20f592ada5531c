#pragma once

#include <cstddef>

namespace gfkd {

// Row-major C[m x n] = alpha * op(A) * op(B) + beta * C.
// Thin wrapper over BLAS dgemm; pinned to one BLAS thread so that summation
// order (and therefore every trained checkpoint) is reproducible.
void dgemm_rm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
              double alpha, const double* a, std::size_t lda, const double* b,
              std::size_t ldb, double beta, double* c, std::size_t ldc);

}  // namespace gfkd

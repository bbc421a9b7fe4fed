#pragma once

#include <cstddef>

namespace evomoe::kernels {

// Row-major dense products. All kernels use a fixed summation order so the
// result is bit-reproducible for identical inputs. When `accumulate` is false
// the output is overwritten.

// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

// C[k x n] (+)= A[m x k]^T * B[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

}  // namespace evomoe::kernels

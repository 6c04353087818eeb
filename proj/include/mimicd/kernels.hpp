#pragma once

#include <cstddef>

// Dense row-major kernels behind the autodiff engine.
//
// Every kernel accumulates each output element over the reduction index in
// ascending order starting from zero, whatever the blocking, the thread count
// or the number of rows in the call. Results are therefore bitwise identical
// between the serial reference and the parallel path, and a row of the output
// does not depend on which other rows share the call.
namespace mimicd::kernels {

// C[M x N] (+)= A[M x K] * B[K x N]
void gemm_reference(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate);
void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate);

// C[K x N] (+)= A[M x K]^T * B[M x N]
void gemm_tn_reference(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n,
                       bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

// out[cols x rows] = in[rows x cols]^T
void transpose(const double* in, double* out, std::size_t rows,
               std::size_t cols);

// Number of OpenMP threads the parallel kernels may use; 0 restores the
// runtime default. Affects speed only, never results.
void set_threads(int threads);
int threads();

}  // namespace mimicd::kernels

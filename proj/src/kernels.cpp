#include "mimicd/kernels.hpp"

#include <algorithm>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mimicd::kernels {

namespace {

int g_threads = 0;

int active_threads() {
#ifdef _OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 16;

constexpr std::size_t kRows = 4;
constexpr std::size_t kCols = 16;

// Eight-lane vector of doubles; unaligned loads and stores go through
// the aligned(8) variant.
typedef double vec8 __attribute__((vector_size(64)));
typedef double vec8u __attribute__((vector_size(64), aligned(8)));

inline vec8 load8(const double* p) { return *reinterpret_cast<const vec8u*>(p); }
inline void store8(double* p, vec8 v) { *reinterpret_cast<vec8u*>(p) = v; }

// Stores a finished accumulator block of R rows. Each lane was summed over k
// in ascending order starting from zero, the same order as the scalar paths.
template <std::size_t R>
inline void store_block(const vec8 (&acc)[R][2], double* c, std::size_t n, bool accumulate) {
  for (std::size_t r = 0; r < R; ++r) {
    double* crow = c + r * n;
    if (accumulate) {
      store8(crow, load8(crow) + acc[r][0]);
      store8(crow + 8, load8(crow + 8) + acc[r][1]);
    } else {
      store8(crow, acc[r][0]);
      store8(crow + 8, acc[r][1]);
    }
  }
}

// Rows [i0, i0 + R) x columns [j0, j0 + kCols) of C.
template <std::size_t R>
inline void block_full(const double* a, const double* b, double* c, std::size_t i0,
                       std::size_t j0, std::size_t k, std::size_t n, bool accumulate) {
  vec8 acc[R][2] = {};
  const double* a0 = a + i0 * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n + j0;
    const vec8 b0 = load8(brow), b1 = load8(brow + 8);
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a0[r * k + p];
      acc[r][0] += av * b0;
      acc[r][1] += av * b1;
    }
  }
  store_block<R>(acc, c + i0 * n + j0, n, accumulate);
}

// General edge block with runtime extents.
inline void block_edge(const double* a, const double* b, double* c,
                       std::size_t i0, std::size_t rows, std::size_t j0,
                       std::size_t cols, std::size_t k, std::size_t n,
                       bool accumulate) {
  double acc[kRows][kCols] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n + j0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double av = a[(i0 + r) * k + p];
      for (std::size_t q = 0; q < cols; ++q) acc[r][q] += av * brow[q];
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + (i0 + r) * n + j0;
    for (std::size_t q = 0; q < cols; ++q)
      crow[q] = accumulate ? crow[q] + acc[r][q] : acc[r][q];
  }
}

// Rows [p0, p0 + R) x columns [j0, j0 + kCols) of C = A^T B.
template <std::size_t R>
inline void block_tn(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t p0, std::size_t j0, std::size_t k, std::size_t n,
                     bool accumulate) {
  vec8 acc[R][2] = {};
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n + j0;
    const double* arow = a + i * k + p0;
    const vec8 b0 = load8(brow), b1 = load8(brow + 8);
    for (std::size_t r = 0; r < R; ++r) {
      acc[r][0] += arow[r] * b0;
      acc[r][1] += arow[r] * b1;
    }
  }
  store_block<R>(acc, c + p0 * n + j0, n, accumulate);
}

void gemm_row_block(const double* a, const double* b, double* c,
                    std::size_t i0, std::size_t rows, std::size_t k,
                    std::size_t n, bool accumulate) {
  for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
    const std::size_t cols = std::min(kCols, n - j0);
    if (cols < kCols) {
      block_edge(a, b, c, i0, rows, j0, cols, k, n, accumulate);
      continue;
    }
    switch (rows) {
      case 4: block_full<4>(a, b, c, i0, j0, k, n, accumulate); break;
      case 3: block_full<3>(a, b, c, i0, j0, k, n, accumulate); break;
      case 2: block_full<2>(a, b, c, i0, j0, k, n, accumulate); break;
      default: block_full<1>(a, b, c, i0, j0, k, n, accumulate); break;
    }
  }
}

}  // namespace

void set_threads(int threads) { g_threads = std::max(0, threads); }
int threads() { return active_threads(); }

void gemm_reference(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
}

void gemm(const double* a, const double* b, double* c, std::size_t m,
          std::size_t k, std::size_t n, bool accumulate) {
  const std::size_t blocks = (m + kRows - 1) / kRows;
  const bool parallel = m * k * n >= kParallelWork && active_threads() > 1;
#pragma omp parallel for schedule(static) num_threads(active_threads()) if (parallel)
  for (std::size_t bi = 0; bi < blocks; ++bi) {
    const std::size_t i0 = bi * kRows;
    gemm_row_block(a, b, c, i0, std::min(kRows, m - i0), k, n, accumulate);
  }
}

void gemm_tn_reference(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n,
                       bool accumulate) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
      c[p * n + j] = accumulate ? c[p * n + j] + acc : acc;
    }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  const bool parallel = m * k * n >= kParallelWork && active_threads() > 1;
  const std::size_t blocks = (k + kRows - 1) / kRows;
#pragma omp parallel for schedule(static) num_threads(active_threads()) if (parallel)
  for (std::size_t bp = 0; bp < blocks; ++bp) {
    const std::size_t p0 = bp * kRows;
    const std::size_t rows = std::min(kRows, k - p0);
    for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
      const std::size_t cols = std::min(kCols, n - j0);
      if (cols == kCols) {
        switch (rows) {
          case 4: block_tn<4>(a, b, c, m, p0, j0, k, n, accumulate); break;
          case 3: block_tn<3>(a, b, c, m, p0, j0, k, n, accumulate); break;
          case 2: block_tn<2>(a, b, c, m, p0, j0, k, n, accumulate); break;
          default: block_tn<1>(a, b, c, m, p0, j0, k, n, accumulate); break;
        }
        continue;
      }
      double acc[kRows][kCols] = {};
      for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n + j0;
        const double* arow = a + i * k + p0;
        for (std::size_t r = 0; r < rows; ++r) {
          const double av = arow[r];
          for (std::size_t q = 0; q < cols; ++q) acc[r][q] += av * brow[q];
        }
      }
      for (std::size_t r = 0; r < rows; ++r) {
        double* crow = c + (p0 + r) * n + j0;
        for (std::size_t q = 0; q < cols; ++q)
          crow[q] = accumulate ? crow[q] + acc[r][q] : acc[r][q];
      }
    }
  }
}

void transpose(const double* in, double* out, std::size_t rows,
               std::size_t cols) {
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile)
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t ie = std::min(rows, i0 + kTile);
      const std::size_t je = std::min(cols, j0 + kTile);
      for (std::size_t i = i0; i < ie; ++i)
        for (std::size_t j = j0; j < je; ++j) out[j * rows + i] = in[i * cols + j];
    }
}

}  // namespace mimicd::kernels

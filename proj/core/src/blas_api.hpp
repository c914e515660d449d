#pragma once

// Thin private shim over BLAS/LAPACK (and MKL's vector math when available).
// Declared locally so the same translation units link against either MKL or
// OpenBLAS without vendor headers.

#include <cmath>
#include <cstdint>

extern "C" {
void dgemm_(const char* transa, const char* transb, const int* m, const int* n, const int* k,
            const double* alpha, const double* a, const int* lda, const double* b, const int* ldb,
            const double* beta, double* c, const int* ldc);
void daxpy_(const int* n, const double* a, const double* x, const int* incx, double* y,
            const int* incy);
void dgels_(const char* trans, const int* m, const int* n, const int* nrhs, double* a,
            const int* lda, double* b, const int* ldb, double* work, const int* lwork, int* info);
#ifdef WPMIXER_MKL
void vdErf(const int n, const double a[], double r[]);
void vdExp(const int n, const double a[], double r[]);
#endif
}

namespace wpmixer::blas {

// Row-major GEMM: C(m x n) = alpha * op(A)(m x k) * op(B)(k x n) + beta * C.
// Implemented as the column-major product C^T = op(B)^T op(A)^T.
inline void gemm_rm(bool transA, bool transB, int m, int n, int k, double alpha, const double* A,
                    const double* B, double beta, double* C) {
  if (m == 0 || n == 0) return;
  const char ta = transA ? 'T' : 'N';
  const char tb = transB ? 'T' : 'N';
  const int lda = transA ? m : k;  // row-major column count of A's storage
  const int ldb = transB ? k : n;
  const int ldc = n;
  dgemm_(&tb, &ta, &n, &m, &k, &alpha, B, &ldb, A, &lda, &beta, C, &ldc);
}

inline void axpy(int64_t n, double a, const double* x, double* y) {
  const int chunk = 1 << 30;
  const int one = 1;
  while (n > 0) {
    int c = static_cast<int>(n > chunk ? chunk : n);
    daxpy_(&c, &a, x, &one, y, &one);
    n -= c;
    x += c;
    y += c;
  }
}

inline void verf(int64_t n, const double* x, double* y) {
#ifdef WPMIXER_MKL
  const int chunk = 1 << 30;
  while (n > 0) {
    int c = static_cast<int>(n > chunk ? chunk : n);
    vdErf(c, x, y);
    n -= c;
    x += c;
    y += c;
  }
#else
  for (int64_t i = 0; i < n; ++i) y[i] = std::erf(x[i]);
#endif
}

inline void vexp(int64_t n, const double* x, double* y) {
#ifdef WPMIXER_MKL
  const int chunk = 1 << 30;
  while (n > 0) {
    int c = static_cast<int>(n > chunk ? chunk : n);
    vdExp(c, x, y);
    n -= c;
    x += c;
    y += c;
  }
#else
  for (int64_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
#endif
}

// Least squares: X = argmin ||A X - B||_F with row-major A (rows x cols),
// B (rows x nrhs); X written row-major (cols x nrhs).  Requires rows >= cols.
void lstsq(int rows, int cols, int nrhs, const double* A, const double* B, double* X);

}  // namespace wpmixer::blas

#pragma once

#include <cstdint>

namespace lfdm::kernels {

// Backend selection for the hot loops. The OpenMP backend parallelizes over
// output rows only; every output element is accumulated serially in the same
// order as the serial backend, so results are bit-identical between the two.
enum class Backend { kSerial, kOpenMP };

Backend backend();
void set_backend(Backend b);
// Reads LFDM_KERNELS=serial|omp once at startup (default omp).
Backend backend_from_env();

// C[M,N] = A[M,K] * B[K,N], C overwritten.
void matmul(const float* a, const float* b, float* c, int m, int k, int n);
// C[M,N] += A[M,K] * B[K,N].
void matmul_acc(const float* a, const float* b, float* c, int m, int k, int n);
// C[M,N] (+)= A^T[M,K] * B[K,N] where A is stored [K,M].
void matmul_at(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate);
// C[M,N] (+)= A[M,K] * B^T[K,N] where B is stored [N,K].
void matmul_bt(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate);

// im2col for one sample: x[C,H,W] -> col[C*kh*kw, OH*OW], zero padding.
void im2col2d(const float* x, float* col, int c, int h, int w, int kh, int kw,
              int stride, int pad, int oh, int ow);
void col2im2d(const float* col, float* x, int c, int h, int w, int kh, int kw,
              int stride, int pad, int oh, int ow);

// 3D variants: x[C,T,H,W] -> col[C*kt*kh*kw, OT*OH*OW].
void im2col3d(const float* x, float* col, int c, int t, int h, int w, int kt,
              int kh, int kw, int stride_t, int stride_s, int pad_t, int pad_s,
              int ot, int oh, int ow);
void col2im3d(const float* col, float* x, int c, int t, int h, int w, int kt,
              int kh, int kw, int stride_t, int stride_s, int pad_t, int pad_s,
              int ot, int oh, int ow);

namespace detail {
void matmul_serial(const float* a, const float* b, float* c, int m, int k,
                   int n, bool accumulate);
void matmul_omp(const float* a, const float* b, float* c, int m, int k, int n,
                bool accumulate);
}  // namespace detail

}  // namespace lfdm::kernels

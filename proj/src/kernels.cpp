#include "lfdm/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

namespace lfdm::kernels {

namespace {
Backend g_backend = backend_from_env();
}

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

Backend backend_from_env() {
  const char* e = std::getenv("LFDM_KERNELS");
  if (e && std::string(e) == "serial") return Backend::kSerial;
  return Backend::kOpenMP;
}

void matmul(const float* a, const float* b, float* c, int m, int k, int n) {
  if (g_backend == Backend::kSerial)
    detail::matmul_serial(a, b, c, m, k, n, false);
  else
    detail::matmul_omp(a, b, c, m, k, n, false);
}

void matmul_acc(const float* a, const float* b, float* c, int m, int k,
                int n) {
  if (g_backend == Backend::kSerial)
    detail::matmul_serial(a, b, c, m, k, n, true);
  else
    detail::matmul_omp(a, b, c, m, k, n, true);
}

void matmul_at(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate) {
  // Materialize A^T; K and M are small in practice (channels x patch size).
  std::vector<float> at(static_cast<size_t>(m) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < m; ++j) at[static_cast<size_t>(j) * k + i] = a[static_cast<size_t>(i) * m + j];
  if (g_backend == Backend::kSerial)
    detail::matmul_serial(at.data(), b, c, m, k, n, accumulate);
  else
    detail::matmul_omp(at.data(), b, c, m, k, n, accumulate);
}

void matmul_bt(const float* a, const float* b, float* c, int m, int k, int n,
               bool accumulate) {
  std::vector<float> bt(static_cast<size_t>(k) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) bt[static_cast<size_t>(j) * n + i] = b[static_cast<size_t>(i) * k + j];
  if (g_backend == Backend::kSerial)
    detail::matmul_serial(a, bt.data(), c, m, k, n, accumulate);
  else
    detail::matmul_omp(a, bt.data(), c, m, k, n, accumulate);
}

void im2col2d(const float* x, float* col, int c, int h, int w, int kh, int kw,
              int stride, int pad, int oh, int ow) {
  const int64_t plane = static_cast<int64_t>(oh) * ow;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        float* dst = col + ((static_cast<int64_t>(ch) * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::memset(dst + static_cast<int64_t>(oy) * ow, 0, sizeof(float) * ow);
            continue;
          }
          const float* src = x + (static_cast<int64_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[static_cast<int64_t>(oy) * ow + ox] =
                (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im2d(const float* col, float* x, int c, int h, int w, int kh, int kw,
              int stride, int pad, int oh, int ow) {
  const int64_t plane = static_cast<int64_t>(oh) * ow;
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const float* src = col + ((static_cast<int64_t>(ch) * kh + ky) * kw + kx) * plane;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          float* dst = x + (static_cast<int64_t>(ch) * h + iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[static_cast<int64_t>(oy) * ow + ox];
          }
        }
      }
    }
  }
}

void im2col3d(const float* x, float* col, int c, int t, int h, int w, int kt,
              int kh, int kw, int stride_t, int stride_s, int pad_t, int pad_s,
              int ot, int oh, int ow) {
  const int64_t plane = static_cast<int64_t>(ot) * oh * ow;
  for (int ch = 0; ch < c; ++ch) {
    for (int kz = 0; kz < kt; ++kz) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          float* dst = col + (((static_cast<int64_t>(ch) * kt + kz) * kh + ky) * kw + kx) * plane;
          for (int oz = 0; oz < ot; ++oz) {
            const int iz = oz * stride_t - pad_t + kz;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride_s - pad_s + ky;
              float* row = dst + (static_cast<int64_t>(oz) * oh + oy) * ow;
              if (iz < 0 || iz >= t || iy < 0 || iy >= h) {
                std::memset(row, 0, sizeof(float) * ow);
                continue;
              }
              const float* src =
                  x + ((static_cast<int64_t>(ch) * t + iz) * h + iy) * w;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride_s - pad_s + kx;
                row[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
              }
            }
          }
        }
      }
    }
  }
}

void col2im3d(const float* col, float* x, int c, int t, int h, int w, int kt,
              int kh, int kw, int stride_t, int stride_s, int pad_t, int pad_s,
              int ot, int oh, int ow) {
  const int64_t plane = static_cast<int64_t>(ot) * oh * ow;
  for (int ch = 0; ch < c; ++ch) {
    for (int kz = 0; kz < kt; ++kz) {
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const float* src = col + (((static_cast<int64_t>(ch) * kt + kz) * kh + ky) * kw + kx) * plane;
          for (int oz = 0; oz < ot; ++oz) {
            const int iz = oz * stride_t - pad_t + kz;
            if (iz < 0 || iz >= t) continue;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride_s - pad_s + ky;
              if (iy < 0 || iy >= h) continue;
              const float* row = src + (static_cast<int64_t>(oz) * oh + oy) * ow;
              float* dst = x + ((static_cast<int64_t>(ch) * t + iz) * h + iy) * w;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride_s - pad_s + kx;
                if (ix >= 0 && ix < w) dst[ix] += row[ox];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace lfdm::kernels

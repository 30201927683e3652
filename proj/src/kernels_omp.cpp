#include <cstring>

#include "lfdm/kernels.hpp"

namespace lfdm::kernels::detail {

// Parallel over output rows; per-row accumulation order matches the serial
// backend, so the two produce bit-identical results for any thread count.
void matmul_omp(const float* a, const float* b, float* c, int m, int k, int n,
                bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<int64_t>(i) * n;
    if (!accumulate) std::memset(crow, 0, sizeof(float) * static_cast<size_t>(n));
    const float* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace lfdm::kernels::detail

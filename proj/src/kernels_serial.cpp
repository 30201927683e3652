#include <cstring>

#include "lfdm/kernels.hpp"

namespace lfdm::kernels::detail {

// Reference implementation. Row-major ikj loop order; the inner j loop is
// the unit-stride one so the compiler can vectorize it.
void matmul_serial(const float* a, const float* b, float* c, int m, int k,
                   int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(float) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<int64_t>(i) * n;
    const float* arow = a + static_cast<int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace lfdm::kernels::detail

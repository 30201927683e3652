#include <cmath>

#include "doctest.h"
#include "lfdm/ops.hpp"
#include "test_util.hpp"

using namespace lfdm;
using test::finite_diff_max_rel_error;
using test::max_abs_diff;
using test::random_tensor;
using test::weighted_readout;

namespace {

// Independent gather oracle for integer-valued backward flow with
// clamp-to-edge semantics.
Tensor integer_shift_oracle(const Tensor& z, int dx, int dy) {
  const int n = z.dim(0), c = z.dim(1), h = z.dim(2), w = z.dim(3);
  Tensor out(z.shape());
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int sx = std::clamp(x + dx, 0, w - 1);
          int sy = std::clamp(y + dy, 0, h - 1);
          out[((static_cast<int64_t>(b) * c + ch) * h + y) * w + x] =
              z[((static_cast<int64_t>(b) * c + ch) * h + sy) * w + sx];
        }
  return out;
}

Tensor constant_flow(int n, int h, int w, float fx, float fy) {
  Tensor f({n, 2, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int b = 0; b < n; ++b)
    for (int64_t i = 0; i < plane; ++i) {
      f[b * 2 * plane + i] = fx;
      f[b * 2 * plane + plane + i] = fy;
    }
  return f;
}

}  // namespace

TEST_SUITE("warp") {

TEST_CASE("identity flow with unit mask returns the input exactly") {
  Rng rng(31);
  Tensor z = random_tensor({2, 3, 5, 7}, rng);
  Tensor f({2, 2, 5, 7});
  Tensor m({2, 1, 5, 7}, 1.0f);
  Var out = ops::warp_bilinear(Var(z), Var(f), Var(m));
  CHECK(max_abs_diff(out.val(), z) < 1e-6f);
}

TEST_CASE("constant mask scales the warped output linearly") {
  Rng rng(32);
  Tensor z = random_tensor({1, 2, 6, 6}, rng);
  Tensor f = constant_flow(1, 6, 6, 0.37f, -0.81f);
  Tensor m1({1, 1, 6, 6}, 1.0f);
  Tensor mc({1, 1, 6, 6}, 0.25f);
  Tensor a = ops::warp_bilinear(Var(z), Var(f), Var(m1)).val();
  Tensor b = ops::warp_bilinear(Var(z), Var(f), Var(mc)).val();
  float worst = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::fabs(b[i] - 0.25f * a[i]));
  CHECK(worst < 1e-6f);
}

TEST_CASE("integer shifts match the brute-force gather oracle") {
  Rng rng(33);
  Tensor z = random_tensor({2, 3, 8, 9}, rng);
  Tensor m({2, 1, 8, 9}, 1.0f);
  for (auto [dx, dy] : std::vector<std::pair<int, int>>{
           {1, 0}, {-2, 0}, {0, 3}, {0, -1}, {2, 2}, {-3, 1}, {10, -10}}) {
    Tensor f = constant_flow(2, 8, 9,
                             static_cast<float>(dx), static_cast<float>(dy));
    Tensor got = ops::warp_bilinear(Var(z), Var(f), Var(m)).val();
    Tensor want = integer_shift_oracle(z, dx, dy);
    CHECK(max_abs_diff(got, want) < 1e-6f);
  }
}

TEST_CASE("fractional shift interpolates linearly between neighbors") {
  // 1x1x1x2 input [a, b]; sampling at x = 0.5 must give (a+b)/2.
  Tensor z({1, 1, 1, 2});
  z[0] = 2.0f;
  z[1] = 6.0f;
  Tensor f({1, 2, 1, 2});
  f[0] = 0.5f;  // x-displacement at x=0
  Tensor m({1, 1, 1, 2}, 1.0f);
  Tensor out = ops::warp_bilinear(Var(z), Var(f), Var(m)).val();
  CHECK(out[0] == doctest::Approx(4.0f));
}

TEST_CASE("warp gradients match finite differences at 20 probe points") {
  Rng rng(34);
  Tensor z = random_tensor({1, 2, 6, 6}, rng);
  Tensor f = random_tensor({1, 2, 6, 6}, rng, 0.4f);
  Tensor m = random_tensor({1, 1, 6, 6}, rng, 0.3f);
  auto fz = [&](const Var& v) {
    return weighted_readout(ops::warp_bilinear(v, Var(f), Var(m)), 8);
  };
  auto ff = [&](const Var& v) {
    return weighted_readout(ops::warp_bilinear(Var(z), v, Var(m)), 8);
  };
  auto fm = [&](const Var& v) {
    return weighted_readout(ops::warp_bilinear(Var(z), Var(f), v), 8);
  };
  CHECK(finite_diff_max_rel_error(fz, z, 20, 35) < 1e-2f);
  CHECK(finite_diff_max_rel_error(ff, f, 20, 36) < 1e-2f);
  CHECK(finite_diff_max_rel_error(fm, m, 20, 37) < 1e-2f);
}

TEST_CASE("out-of-range sampling clamps to the edge") {
  Rng rng(35);
  Tensor z = random_tensor({1, 1, 4, 4}, rng);
  Tensor f = constant_flow(1, 4, 4, 100.0f, 0.0f);
  Tensor m({1, 1, 4, 4}, 1.0f);
  Tensor out = ops::warp_bilinear(Var(z), Var(f), Var(m)).val();
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(out[y * 4 + x] == doctest::Approx(z[y * 4 + 3]));
}

TEST_CASE("non-finite flow values are rejected") {
  Tensor z({1, 1, 2, 2}, 1.0f);
  Tensor f({1, 2, 2, 2});
  f[0] = std::numeric_limits<float>::quiet_NaN();
  Tensor m({1, 1, 2, 2}, 1.0f);
  CHECK_THROWS_AS((void)ops::warp_bilinear(Var(z), Var(f), Var(m)),
                  std::runtime_error);
}

}  // TEST_SUITE

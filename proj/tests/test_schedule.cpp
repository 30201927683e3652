#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "lfdm/schedule.hpp"
#include "test_util.hpp"

using namespace lfdm;
using namespace lfdm::diffusion;
using test::max_abs_diff;
using test::random_tensor;

TEST_SUITE("schedule") {

TEST_CASE("cosine schedule matches an independent high-precision oracle") {
  // Reference values computed with an independent double-precision
  // implementation of the cosine alpha_bar formula (s = 0.008).
  const NoiseSchedule s1000 = make_cosine_schedule(1000);
  CHECK(s1000.beta[1] == doctest::Approx(4.1284224822e-05).epsilon(1e-9));
  CHECK(s1000.alpha_bar[1] == doctest::Approx(0.999958715775).epsilon(1e-11));
  CHECK(s1000.alpha_bar[500] == doctest::Approx(0.493843590441).epsilon(1e-10));
  CHECK(s1000.alpha_bar[1000] ==
        doctest::Approx(2.42876690703e-09).epsilon(1e-6));

  const NoiseSchedule s200 = make_cosine_schedule(200);
  CHECK(s200.beta[1] == doctest::Approx(0.000254972636372).epsilon(1e-9));
  CHECK(s200.alpha_bar[200] == doctest::Approx(6.07179930855e-08).epsilon(1e-8));

  const NoiseSchedule s20 = make_cosine_schedule(20);
  CHECK(s20.beta[1] == doctest::Approx(0.00799272131578).epsilon(1e-9));
  CHECK(s20.alpha_bar[1] == doctest::Approx(0.992007278684).epsilon(1e-11));
  CHECK(s20.alpha_bar[20] == doctest::Approx(6.05964462145e-06).epsilon(1e-8));
  CHECK(s20.sigma[2] == doctest::Approx(0.0758257022101).epsilon(1e-9));
}

TEST_CASE("alpha_bar at T/2 is schedule-size invariant") {
  for (int T : {20, 200, 1000}) {
    const NoiseSchedule s = make_cosine_schedule(T);
    CHECK(s.alpha_bar[T / 2] == doctest::Approx(0.493843590441).epsilon(1e-9));
  }
}

TEST_CASE("tables are well-formed: monotone, bounded, clipped") {
  for (int T : {20, 200, 1000}) {
    const NoiseSchedule s = make_cosine_schedule(T);
    REQUIRE(s.T == T);
    REQUIRE(static_cast<int>(s.beta.size()) == T + 1);
    CHECK(s.alpha_bar[0] == doctest::Approx(1.0));
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
      CHECK(s.beta[t] > 0.0);
      CHECK(s.beta[t] <= 0.999);
      CHECK(s.alpha[t] == doctest::Approx(1.0 - s.beta[t]));
      CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
      prod *= s.alpha[t];
      CHECK(s.alpha_bar[t] == doctest::Approx(prod).epsilon(1e-12));
      CHECK(s.sigma[t] >= 0.0);
    }
    CHECK(s.alpha_bar[T] < 0.01);  // near-total noising at the endpoint
  }
  // The final cosine betas exceed the clip and must be held at 0.999.
  const NoiseSchedule s = make_cosine_schedule(1000);
  CHECK(s.beta[1000] == doctest::Approx(0.999));
}

TEST_CASE("sigma matches the posterior-variance formula") {
  const NoiseSchedule s = make_cosine_schedule(50);
  for (int t = 1; t <= 50; ++t) {
    const double bt = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) *
                      s.beta[t];
    CHECK(s.sigma[t] == doctest::Approx(std::sqrt(bt)).epsilon(1e-12));
  }
}

TEST_CASE("q_sample and predict_x0 invert each other") {
  const NoiseSchedule s = make_cosine_schedule(200);
  Rng rng(51);
  Tensor s0 = random_tensor({3, 4, 5, 5}, rng);
  // predict_x0 divides by sqrt(alpha_bar), which is ~2.5e-4 at the very
  // last step, so the strict tolerance only holds away from the endpoint.
  for (int t : {1, 37, 100, 190}) {
    Tensor eps = randn_like(s0.shape(), rng);
    Tensor st = q_sample(s0, t, eps, s);
    Tensor rec = predict_x0(st, t, eps, s);
    CHECK(max_abs_diff(rec, s0) < 1e-5f);
  }
  // The opposite direction is well conditioned everywhere, including t = T:
  // q_sample(predict_x0(s_t), t, eps) returns s_t.
  for (int t : {1, 100, 200}) {
    Tensor st = random_tensor({3, 4, 5, 5}, rng);
    Tensor eps = randn_like(st.shape(), rng);
    Tensor back = q_sample(predict_x0(st, t, eps, s), t, eps, s);
    CHECK(max_abs_diff(back, st) < 1e-5f);
  }
}

TEST_CASE("q_sample interpolates with the schedule coefficients") {
  const NoiseSchedule s = make_cosine_schedule(20);
  Tensor s0({2, 2}, 1.0f);
  Tensor eps({2, 2}, -0.5f);
  Tensor st = q_sample(s0, 5, eps, s);
  const float want = static_cast<float>(std::sqrt(s.alpha_bar[5]) -
                                        0.5 * std::sqrt(1.0 - s.alpha_bar[5]));
  for (int64_t i = 0; i < st.numel(); ++i)
    CHECK(st[i] == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("dynamic threshold matches a full-sort percentile oracle") {
  Rng rng(52);
  Tensor x = random_tensor({3, 7, 11}, rng, 3.0f);
  for (float p : {0.5f, 0.90f, 1.0f}) {
    // Oracle: sort all |values|, take rank ceil(p*n), clamp and rescale.
    std::vector<float> mags;
    for (int64_t i = 0; i < x.numel(); ++i)
      mags.push_back(std::abs(x[i]));
    std::sort(mags.begin(), mags.end());
    int64_t k = static_cast<int64_t>(std::ceil(
                    static_cast<double>(p) * static_cast<double>(mags.size()))) -
                1;
    k = std::clamp<int64_t>(k, 0, static_cast<int64_t>(mags.size()) - 1);
    const float scale = std::max(mags[static_cast<size_t>(k)], 1.0f);
    Tensor got = dynamic_threshold(x, p);
    for (int64_t i = 0; i < x.numel(); ++i) {
      const float want = std::clamp(x[i], -scale, scale) / scale;
      CHECK(got[i] == doctest::Approx(want).epsilon(1e-6));
    }
    for (int64_t i = 0; i < got.numel(); ++i) {
      CHECK(got[i] <= 1.0f);
      CHECK(got[i] >= -1.0f);
    }
  }
}

TEST_CASE("dynamic threshold is the identity for signals within [-1, 1]") {
  Rng rng(53);
  Tensor x({4, 6});
  for (int64_t i = 0; i < x.numel(); ++i)
    x[i] = rng.uniform() * 1.8f - 0.9f;
  Tensor once = dynamic_threshold(x, 0.90f);
  // With every |value| <= 1 the scale floors at 1, so nothing changes,
  // and applying the operation again is a no-op.
  CHECK(max_abs_diff(once, x) < 1e-7f);
  CHECK(max_abs_diff(dynamic_threshold(once, 0.90f), once) < 1e-7f);
}

TEST_CASE("randn_like is deterministic per seed and roughly standard") {
  Rng a(54), b(54), c(55);
  Tensor x = randn_like({64, 64}, a);
  Tensor y = randn_like({64, 64}, b);
  CHECK(max_abs_diff(x, y) == 0.0f);
  Tensor z = randn_like({64, 64}, c);
  CHECK(max_abs_diff(x, z) > 0.0f);

  double mean = 0.0, var = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) mean += x[i];
  mean /= static_cast<double>(x.numel());
  for (int64_t i = 0; i < x.numel(); ++i)
    var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(x.numel());
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("invalid schedule sizes are rejected") {
  CHECK_THROWS_AS((void)make_cosine_schedule(0), std::runtime_error);
  CHECK_THROWS_AS((void)make_cosine_schedule(-5), std::runtime_error);
}

}  // TEST_SUITE

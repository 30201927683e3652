#include "lfdm/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace lfdm::diffusion {

NoiseSchedule make_cosine_schedule(int T, double s, double beta_clip) {
  check(T >= 1, "schedule needs T >= 1");
  NoiseSchedule sc;
  sc.T = T;
  sc.beta.assign(static_cast<size_t>(T) + 1, 0.0);
  sc.alpha.assign(static_cast<size_t>(T) + 1, 0.0);
  sc.alpha_bar.assign(static_cast<size_t>(T) + 1, 0.0);
  sc.sigma.assign(static_cast<size_t>(T) + 1, 0.0);
  auto g = [&](double t) {
    const double v = std::cos(((t / T + s) / (1.0 + s)) * M_PI / 2.0);
    return v * v;
  };
  const double g0 = g(0.0);
  sc.alpha_bar[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double ab = g(static_cast<double>(t)) / g0;
    double beta = 1.0 - ab / sc.alpha_bar[static_cast<size_t>(t) - 1];
    beta = std::min(beta, beta_clip);
    sc.beta[static_cast<size_t>(t)] = beta;
    sc.alpha[static_cast<size_t>(t)] = 1.0 - beta;
    sc.alpha_bar[static_cast<size_t>(t)] =
        sc.alpha_bar[static_cast<size_t>(t) - 1] * (1.0 - beta);
    const double beta_tilde =
        (1.0 - sc.alpha_bar[static_cast<size_t>(t) - 1]) /
        (1.0 - sc.alpha_bar[static_cast<size_t>(t)]) * beta;
    sc.sigma[static_cast<size_t>(t)] = std::sqrt(beta_tilde);
  }
  return sc;
}

Tensor q_sample(const Tensor& s0, int t, const Tensor& eps,
                const NoiseSchedule& sched) {
  check(t >= 1 && t <= sched.T, "q_sample: t out of range");
  check(s0.shape() == eps.shape(), "q_sample: shape mismatch");
  const float a = static_cast<float>(std::sqrt(sched.alpha_bar[static_cast<size_t>(t)]));
  const float b = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t)]));
  Tensor out(s0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * s0[i] + b * eps[i];
  return out;
}

Tensor predict_x0(const Tensor& st, int t, const Tensor& eps_hat,
                  const NoiseSchedule& sched) {
  check(t >= 1 && t <= sched.T, "predict_x0: t out of range");
  check(st.shape() == eps_hat.shape(), "predict_x0: shape mismatch");
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  const float inv_a = static_cast<float>(1.0 / std::sqrt(ab));
  const float b = static_cast<float>(std::sqrt(1.0 - ab));
  Tensor out(st.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = (st[i] - b * eps_hat[i]) * inv_a;
  return out;
}

Tensor dynamic_threshold(const Tensor& s0_hat, float p) {
  check(s0_hat.numel() > 0, "dynamic_threshold: empty input");
  check(p > 0.0f && p <= 1.0f, "dynamic_threshold: percentile out of range");
  std::vector<float> mags(static_cast<size_t>(s0_hat.numel()));
  for (int64_t i = 0; i < s0_hat.numel(); ++i)
    mags[static_cast<size_t>(i)] = std::abs(s0_hat[i]);
  // p-th percentile = value at rank ceil(p*n) in the ascending order.
  int64_t k = static_cast<int64_t>(std::ceil(static_cast<double>(p) * static_cast<double>(mags.size()))) - 1;
  k = std::clamp<int64_t>(k, 0, static_cast<int64_t>(mags.size()) - 1);
  std::nth_element(mags.begin(), mags.begin() + k, mags.end());
  const float q = mags[static_cast<size_t>(k)];
  const float s = std::max(q, 1.0f);
  Tensor out(s0_hat.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::clamp(s0_hat[i], -s, s) / s;
  return out;
}

Tensor randn_like(const std::vector<int>& shape, Rng& rng) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace lfdm::diffusion

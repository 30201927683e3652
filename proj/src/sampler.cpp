#include "lfdm/sampler.hpp"

#include <cmath>

#include "lfdm/ops.hpp"

namespace lfdm::diffusion {

Tensor guided_epsilon(const CondEpsilonFn& eps, const Tensor& s_t, int t,
                      int label, float g) {
  if (label == kNullLabel) return eps(s_t, t, kNullLabel);
  if (g == 1.0f) return eps(s_t, t, label);
  if (g == 0.0f) return eps(s_t, t, kNullLabel);
  Tensor e_c = eps(s_t, t, label);
  Tensor e_u = eps(s_t, t, kNullLabel);
  Tensor out(s_t.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    out[i] = e_u[i] + g * (e_c[i] - e_u[i]);
  }
  return out;
}

Tensor ddpm_step(const Tensor& s_t, int t, const Tensor& eps_hat,
                 const NoiseSchedule& sched, Rng& rng,
                 const SamplerOptions& opt) {
  check(t >= 1 && t <= sched.T, "ddpm_step: t out of range");
  Tensor x0 = predict_x0(s_t, t, eps_hat, sched);
  if (opt.dynamic_thresholding) {
    x0 = dynamic_threshold(x0, opt.threshold_percentile);
  }
  const double ab_t = sched.alpha_bar[static_cast<size_t>(t)];
  const double ab_prev = sched.alpha_bar[static_cast<size_t>(t - 1)];
  const double beta_t = sched.beta[static_cast<size_t>(t)];
  const double alpha_t = sched.alpha[static_cast<size_t>(t)];
  // Posterior mean coefficients for q(s_{t-1} | s_t, s_0).
  const double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
  const double c1 = std::sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t);
  const double sigma = sched.sigma[static_cast<size_t>(t)];
  const bool add_noise = t > 1;
  Tensor out(s_t.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    double mean = c0 * x0[i] + c1 * s_t[i];
    if (add_noise) mean += sigma * rng.normal();
    out[i] = static_cast<float>(mean);
  }
  return out;
}

Tensor ddpm_sample(const EpsilonFn& eps, const std::vector<int>& shape,
                   const NoiseSchedule& sched, Rng& rng,
                   const SamplerOptions& opt) {
  Tensor s = randn_like(shape, rng);
  for (int t = sched.T; t >= 1; --t) {
    s = ddpm_step(s, t, eps(s, t), sched, rng, opt);
  }
  return s;
}

Tensor ddim_sample(const EpsilonFn& eps, const std::vector<int>& shape,
                   const NoiseSchedule& sched, int steps, Rng& rng,
                   const SamplerOptions& opt) {
  check(steps >= 1 && steps <= sched.T, "ddim_sample: invalid step count");
  // Evenly spaced timesteps t_1 < ... < t_S = T; the chain ends at 0.
  std::vector<int> ts(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    int t = static_cast<int>(
        std::llround(static_cast<double>(sched.T) * (i + 1) / steps));
    ts[static_cast<size_t>(i)] = t < 1 ? 1 : t;
  }
  Tensor s = randn_like(shape, rng);
  for (int i = steps - 1; i >= 0; --i) {
    const int t = ts[static_cast<size_t>(i)];
    const int t_prev = (i == 0) ? 0 : ts[static_cast<size_t>(i - 1)];
    Tensor eps_hat = eps(s, t);
    Tensor x0 = predict_x0(s, t, eps_hat, sched);
    if (opt.dynamic_thresholding) {
      x0 = dynamic_threshold(x0, opt.threshold_percentile);
    }
    const double ab_prev = sched.alpha_bar[static_cast<size_t>(t_prev)];
    const double a = std::sqrt(ab_prev);
    const double b = std::sqrt(1.0 - ab_prev);
    for (int64_t k = 0; k < s.numel(); ++k) {
      s[k] = static_cast<float>(a * x0[k] + b * eps_hat[k]);
    }
  }
  return s;
}

Var dm_training_loss(const Denoiser3D& model, const Tensor& s0,
                     const Tensor& z0, int label, const NoiseSchedule& sched,
                     Rng& rng, float p_null) {
  check(s0.rank() == 4, "dm_training_loss: s0 must be [C,K,H,W]");
  const int t = rng.uniform_int(1, sched.T);
  Tensor noise = randn_like(s0.shape(), rng);
  Tensor s_t = q_sample(s0, t, noise, sched);
  int lab = label;
  if (p_null > 0.0f && rng.uniform() < p_null) lab = kNullLabel;
  std::vector<int> batched = s0.shape();
  batched.insert(batched.begin(), 1);
  Var s_t_var(s_t.reshaped(batched), false);
  Tensor z0_b = z0.reshaped({1, z0.dim(0), z0.dim(1), z0.dim(2)});
  Var pred = model.forward(s_t_var, {t}, z0_b, {lab});
  Var target(noise.reshaped(batched), false);
  return ops::mse_loss(pred, target);
}

}  // namespace lfdm::diffusion

#pragma once

#include <functional>

#include "lfdm/denoiser.hpp"
#include "lfdm/schedule.hpp"

namespace lfdm::diffusion {

// Noise prediction as a function of (s_t, t); conditioning and guidance are
// baked in by the caller. Samplers are pure in (fn, inputs, rng).
using EpsilonFn = std::function<Tensor(const Tensor& s_t, int t)>;

// Conditional noise prediction for guidance: (s_t, t, label-or-null).
using CondEpsilonFn = std::function<Tensor(const Tensor& s_t, int t, int label)>;

// Classifier-free guidance: eps = eps(null) + g * (eps(label) - eps(null)).
// g = 1 and label = kNullLabel take single-evaluation fast paths.
Tensor guided_epsilon(const CondEpsilonFn& eps, const Tensor& s_t, int t,
                      int label, float g);

struct SamplerOptions {
  bool dynamic_thresholding = true;
  float threshold_percentile = 0.90f;
};

// One reverse step: predict s_0, (optionally) threshold it, form the
// posterior mean, and add sigma_t-scaled noise except at t = 1.
Tensor ddpm_step(const Tensor& s_t, int t, const Tensor& eps_hat,
                 const NoiseSchedule& sched, Rng& rng,
                 const SamplerOptions& opt = {});

// Full reverse chain from Gaussian noise of the given shape.
Tensor ddpm_sample(const EpsilonFn& eps, const std::vector<int>& shape,
                   const NoiseSchedule& sched, Rng& rng,
                   const SamplerOptions& opt = {});

// Deterministic (eta = 0) DDIM over an evenly spaced sub-schedule.
Tensor ddim_sample(const EpsilonFn& eps, const std::vector<int>& shape,
                   const NoiseSchedule& sched, int steps, Rng& rng,
                   const SamplerOptions& opt = {});

// Single-sample denoising training loss: draws t ~ U(1,T) and eps ~ N(0,I),
// replaces the label with the null embedding with probability p_null, and
// returns ||eps - eps_theta(s_t, t, z0, e)||^2 as a differentiable scalar.
Var dm_training_loss(const Denoiser3D& model, const Tensor& s0,
                     const Tensor& z0, int label, const NoiseSchedule& sched,
                     Rng& rng, float p_null = 0.1f);

}  // namespace lfdm::diffusion

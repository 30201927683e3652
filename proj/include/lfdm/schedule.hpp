#pragma once

#include <vector>

#include "lfdm/nn.hpp"
#include "lfdm/tensor.hpp"

namespace lfdm::diffusion {

// Noise schedule tables indexed by timestep t in {1..T}; alpha_bar[0] = 1.
// sigma_t^2 is the lower-bound posterior variance
// beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // size T+1, index 0 unused
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product, alpha_bar[0] = 1
  std::vector<double> sigma;      // sqrt(beta_tilde)
};

// Cosine schedule: alpha_bar_t = g(t)/g(0) with
// g(t) = cos^2(((t/T + s) / (1 + s)) * pi/2), s = 0.008, and
// beta_t = 1 - alpha_bar_t / alpha_bar_{t-1} clipped to <= 0.999.
NoiseSchedule make_cosine_schedule(int T, double s = 0.008,
                                   double beta_clip = 0.999);

// s_t = sqrt(alpha_bar_t) * s_0 + sqrt(1 - alpha_bar_t) * eps.
Tensor q_sample(const Tensor& s0, int t, const Tensor& eps,
                const NoiseSchedule& sched);

// s_0_hat = (s_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t).
Tensor predict_x0(const Tensor& st, int t, const Tensor& eps_hat,
                  const NoiseSchedule& sched);

// Per-sample percentile clamp-and-rescale of the predicted clean signal:
// q = p-th percentile of |values| over the whole volume, s = max(q, 1),
// clamp to [-s, s], divide by s.
Tensor dynamic_threshold(const Tensor& s0_hat, float p = 0.90f);

Tensor randn_like(const std::vector<int>& shape, Rng& rng);

}  // namespace lfdm::diffusion

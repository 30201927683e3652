#pragma once

#include <cmath>
#include <string>

#include "lfdm/nn.hpp"
#include "lfdm/ops.hpp"

namespace lfdm {

struct Conv2d {
  Var w, b;
  int stride = 1, pad = 1;
  Var fwd(const Var& x) const { return ops::conv2d(x, w, b, stride, pad); }
  static Conv2d create(ParamStore& ps, const std::string& name, int cin,
                       int cout, int k, int stride, int pad, Rng& rng,
                       float gain = 1.0f) {
    Conv2d c;
    const float std = gain * std::sqrt(2.0f / static_cast<float>(cin * k * k));
    c.w = ps.make(name + ".w", {cout, cin, k, k}, rng, std);
    c.b = ps.make_zeros(name + ".b", {cout});
    c.stride = stride;
    c.pad = pad;
    return c;
  }
};

struct Conv3d {
  Var w, b;
  int stride_t = 1, stride_s = 1, pad_t = 1, pad_s = 1;
  Var fwd(const Var& x) const {
    return ops::conv3d(x, w, b, stride_t, stride_s, pad_t, pad_s);
  }
  static Conv3d create(ParamStore& ps, const std::string& name, int cin,
                       int cout, int kt, int ks, int stride_t, int stride_s,
                       Rng& rng, float gain = 1.0f) {
    Conv3d c;
    const float std =
        gain * std::sqrt(2.0f / static_cast<float>(cin * kt * ks * ks));
    c.w = ps.make(name + ".w", {cout, cin, kt, ks, ks}, rng, std);
    c.b = ps.make_zeros(name + ".b", {cout});
    c.stride_t = stride_t;
    c.stride_s = stride_s;
    c.pad_t = kt / 2;
    c.pad_s = ks / 2;
    return c;
  }
};

struct GroupNormLayer {
  Var gamma, beta;
  int groups = 8;
  Var fwd(const Var& x) const {
    return ops::group_norm(x, gamma, beta, groups);
  }
  static GroupNormLayer create(ParamStore& ps, const std::string& name, int c,
                               int groups) {
    GroupNormLayer g;
    while (c % groups != 0) groups /= 2;  // always valid; 1 divides anything
    g.groups = std::max(groups, 1);
    g.gamma = ps.make_const(name + ".gamma", {c}, 1.0f);
    g.beta = ps.make_zeros(name + ".beta", {c});
    return g;
  }
};

struct LinearLayer {
  Var w, b;
  Var fwd(const Var& x) const { return ops::linear(x, w, b); }
  static LinearLayer create(ParamStore& ps, const std::string& name, int din,
                            int dout, Rng& rng, float gain = 1.0f) {
    LinearLayer l;
    l.w = ps.make(name + ".w", {dout, din}, rng,
                  gain * std::sqrt(2.0f / static_cast<float>(din)));
    l.b = ps.make_zeros(name + ".b", {dout});
    return l;
  }
};

// Sinusoidal position embedding for diffusion timesteps; plain input, no
// gradient.
Tensor sinusoidal_embedding(const std::vector<int>& steps, int dim);

}  // namespace lfdm

#pragma once

#include <vector>

#include "lfdm/autograd.hpp"

namespace lfdm::ops {

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float s);
Var add_scalar(const Var& a, float s);
Var relu(const Var& a);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var tanh_(const Var& a);

// Broadcasts.
// x[N,C,...] + b[C]
Var bias_add_channel(const Var& x, const Var& b);
// x[N,C,...] + e[N,C] broadcast over trailing spatial dims
Var emb_add_channel(const Var& x, const Var& e);

// Shape.
Var reshape(const Var& x, std::vector<int> shape);
Var concat_channels(const std::vector<Var>& xs);

// Dense / attention primitives.
Var matmul(const Var& a, const Var& b);               // [M,K]x[K,N]
Var linear(const Var& x, const Var& w, const Var& b); // x[N,D], w[O,D], b[O]
Var bmm(const Var& a, const Var& b);                  // [B,M,K]x[B,K,N]
Var transpose_last2(const Var& x);                    // [B,M,N] -> [B,N,M]
Var softmax_lastdim(const Var& x);

// Convolutions. Weight layouts: [O,C,kh,kw] and [O,C,kt,kh,kw].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv3d(const Var& x, const Var& w, const Var& b, int stride_t,
           int stride_s, int pad_t, int pad_s);

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               float eps = 1e-5f);

Var upsample2x_2d(const Var& x);  // nearest, [N,C,H,W]
Var upsample2x_3d(const Var& x);  // nearest, spatial dims only, [N,C,T,H,W]
Var avg_pool2x_2d(const Var& x);

// Reductions / losses.
Var mean_all(const Var& x);
Var global_avg_pool(const Var& x);  // [N,C,...] -> [N,C]
Var l1_loss(const Var& a, const Var& b);
Var mse_loss(const Var& a, const Var& b);
Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels);

// Occlusion-masked backward warp: out(p) = m(p) * bilinear(z, p + f(p)),
// clamp-to-edge sampling. z[N,C,H,W], f[N,2,H,W] (channel 0 = x
// displacement, 1 = y displacement, in grid pixels), m[N,1,H,W].
Var warp_bilinear(const Var& z, const Var& f, const Var& m);

// Table lookup: table[V,D], one row per id.
Var embedding(const Var& table, const std::vector<int>& ids);

}  // namespace lfdm::ops

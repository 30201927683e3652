#include "lfdm/ops.hpp"

#include <cmath>
#include <cstring>

#include "lfdm/kernels.hpp"

namespace lfdm::ops {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  check(a.val().same_shape(b.val()),
        std::string(op) + ": shape mismatch " + a.val().shape_str() + " vs " +
            b.val().shape_str());
}

int64_t spatial_numel(const std::vector<int>& shape) {
  int64_t s = 1;
  for (size_t i = 2; i < shape.size(); ++i) s *= shape[i];
  return s;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.val()[i] + b.val()[i];
  return make_op(std::move(out), {a, b}, [](Node& nd) {
    for (int pi = 0; pi < 2; ++pi) {
      Node& p = *nd.parents[pi];
      if (!p.requires_grad) continue;
      Tensor& g = p.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] - b.val()[i];
  return make_op(std::move(out), {a, b}, [](Node& nd) {
    if (nd.parents[0]->requires_grad) {
      Tensor& g = nd.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& g = nd.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= nd.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * b.val()[i];
  return make_op(std::move(out), {a, b}, [](Node& nd) {
    const Tensor& av = nd.parents[0]->value;
    const Tensor& bv = nd.parents[1]->value;
    if (nd.parents[0]->requires_grad) {
      Tensor& g = nd.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i] * bv[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& g = nd.parents[1]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, float s) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] * s;
  return make_op(std::move(out), {a}, [s](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i] * s;
  });
}

Var add_scalar(const Var& a, float s) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a.val()[i] + s;
  return make_op(std::move(out), {a}, [](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
  });
}

Var relu(const Var& a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = a.val()[i] > 0.0f ? a.val()[i] : 0.0f;
  return make_op(std::move(out), {a}, [](Node& nd) {
    const Tensor& av = nd.parents[0]->value;
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (av[i] > 0.0f) g[i] += nd.grad[i];
  });
}

Var silu(const Var& a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const float x = a.val()[i];
    out[i] = x / (1.0f + std::exp(-x));
  }
  return make_op(std::move(out), {a}, [](Node& nd) {
    const Tensor& av = nd.parents[0]->value;
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const float x = av[i];
      const float s = 1.0f / (1.0f + std::exp(-x));
      g[i] += nd.grad[i] * (s * (1.0f + x * (1.0f - s)));
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = 1.0f / (1.0f + std::exp(-a.val()[i]));
  return make_op(std::move(out), {a}, [](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const float y = nd.value[i];
      g[i] += nd.grad[i] * y * (1.0f - y);
    }
  });
}

Var tanh_(const Var& a) {
  Tensor out(a.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a.val()[i]);
  return make_op(std::move(out), {a}, [](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) {
      const float y = nd.value[i];
      g[i] += nd.grad[i] * (1.0f - y * y);
    }
  });
}

Var bias_add_channel(const Var& x, const Var& b) {
  check(x.shape().size() >= 2 && b.shape().size() == 1 &&
            b.dim(0) == x.dim(1),
        "bias_add_channel: bad shapes");
  const int N = x.dim(0), C = x.dim(1);
  const int64_t S = spatial_numel(x.shape());
  Tensor out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float bv = b.val()[c];
      const int64_t base = (static_cast<int64_t>(n) * C + c) * S;
      for (int64_t i = 0; i < S; ++i) out[base + i] = x.val()[base + i] + bv;
    }
  return make_op(std::move(out), {x, b}, [N, C, S](Node& nd) {
    if (nd.parents[0]->requires_grad) {
      Tensor& g = nd.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& g = nd.parents[1]->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const int64_t base = (static_cast<int64_t>(n) * C + c) * S;
          float acc = 0.0f;
          for (int64_t i = 0; i < S; ++i) acc += nd.grad[base + i];
          g[c] += acc;
        }
    }
  });
}

Var emb_add_channel(const Var& x, const Var& e) {
  check(x.shape().size() >= 2 && e.shape().size() == 2 &&
            e.dim(0) == x.dim(0) && e.dim(1) == x.dim(1),
        "emb_add_channel: bad shapes");
  const int N = x.dim(0), C = x.dim(1);
  const int64_t S = spatial_numel(x.shape());
  Tensor out(x.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const float ev = e.val()[static_cast<int64_t>(n) * C + c];
      const int64_t base = (static_cast<int64_t>(n) * C + c) * S;
      for (int64_t i = 0; i < S; ++i) out[base + i] = x.val()[base + i] + ev;
    }
  return make_op(std::move(out), {x, e}, [N, C, S](Node& nd) {
    if (nd.parents[0]->requires_grad) {
      Tensor& g = nd.parents[0]->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& g = nd.parents[1]->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const int64_t base = (static_cast<int64_t>(n) * C + c) * S;
          float acc = 0.0f;
          for (int64_t i = 0; i < S; ++i) acc += nd.grad[base + i];
          g[static_cast<int64_t>(n) * C + c] += acc;
        }
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  Tensor out = x.val().reshaped(shape);
  return make_op(std::move(out), {x}, [](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += nd.grad[i];
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  check(!xs.empty(), "concat_channels: empty input");
  const auto& s0 = xs[0].shape();
  int ctotal = 0;
  for (const auto& x : xs) {
    check(x.shape().size() == s0.size() && x.dim(0) == xs[0].dim(0),
          "concat_channels: rank/batch mismatch");
    for (size_t i = 2; i < s0.size(); ++i)
      check(x.shape()[i] == s0[i], "concat_channels: spatial mismatch");
    ctotal += x.dim(1);
  }
  std::vector<int> oshape = s0;
  oshape[1] = ctotal;
  const int N = s0[0];
  const int64_t S = spatial_numel(s0);
  Tensor out(oshape);
  std::vector<int> cs;  // channel counts
  for (const auto& x : xs) cs.push_back(x.dim(1));
  int64_t off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const int64_t blk = static_cast<int64_t>(cs[k]) * S;
    for (int n = 0; n < N; ++n)
      std::memcpy(out.data() + (static_cast<int64_t>(n) * ctotal) * S + off,
                  xs[k].val().data() + static_cast<int64_t>(n) * blk,
                  sizeof(float) * blk);
    off += blk;
  }
  return make_op(std::move(out), xs, [N, S, cs, ctotal](Node& nd) {
    int64_t off = 0;
    for (size_t k = 0; k < nd.parents.size(); ++k) {
      const int64_t blk = static_cast<int64_t>(cs[k]) * S;
      if (nd.parents[k]->requires_grad) {
        Tensor& g = nd.parents[k]->ensure_grad();
        for (int n = 0; n < N; ++n) {
          const float* src =
              nd.grad.data() + (static_cast<int64_t>(n) * ctotal) * S + off;
          float* dst = g.data() + static_cast<int64_t>(n) * blk;
          for (int64_t i = 0; i < blk; ++i) dst[i] += src[i];
        }
      }
      off += blk;
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2 &&
            a.dim(1) == b.dim(0),
        "matmul: bad shapes");
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out({M, N});
  kernels::matmul(a.val().data(), b.val().data(), out.data(), M, K, N);
  return make_op(std::move(out), {a, b}, [M, K, N](Node& nd) {
    const Tensor& av = nd.parents[0]->value;
    const Tensor& bv = nd.parents[1]->value;
    if (nd.parents[0]->requires_grad) {
      Tensor& g = nd.parents[0]->ensure_grad();
      kernels::matmul_bt(nd.grad.data(), bv.data(), g.data(), M, N, K, true);
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& g = nd.parents[1]->ensure_grad();
      kernels::matmul_at(av.data(), nd.grad.data(), g.data(), K, M, N, true);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  check(x.shape().size() == 2 && w.shape().size() == 2 &&
            x.dim(1) == w.dim(1) && b.dim(0) == w.dim(0),
        "linear: bad shapes");
  const int N = x.dim(0), D = x.dim(1), O = w.dim(0);
  Tensor out({N, O});
  // out = x * w^T + b
  kernels::matmul_bt(x.val().data(), w.val().data(), out.data(), N, D, O,
                     false);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) out[static_cast<int64_t>(n) * O + o] += b.val()[o];
  return make_op(std::move(out), {x, w, b}, [N, D, O](Node& nd) {
    const Tensor& xv = nd.parents[0]->value;
    const Tensor& wv = nd.parents[1]->value;
    if (nd.parents[0]->requires_grad) {
      Tensor& g = nd.parents[0]->ensure_grad();
      kernels::matmul_acc(nd.grad.data(), wv.data(), g.data(), N, O, D);
    }
    if (nd.parents[1]->requires_grad) {
      Tensor& g = nd.parents[1]->ensure_grad();
      kernels::matmul_at(nd.grad.data(), xv.data(), g.data(), O, N, D, true);
    }
    if (nd.parents[2]->requires_grad) {
      Tensor& g = nd.parents[2]->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) g[o] += nd.grad[static_cast<int64_t>(n) * O + o];
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  check(a.shape().size() == 3 && b.shape().size() == 3 &&
            a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
        "bmm: bad shapes");
  const int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  Tensor out({B, M, N});
  for (int i = 0; i < B; ++i)
    kernels::matmul(a.val().data() + static_cast<int64_t>(i) * M * K,
                    b.val().data() + static_cast<int64_t>(i) * K * N,
                    out.data() + static_cast<int64_t>(i) * M * N, M, K, N);
  return make_op(std::move(out), {a, b}, [B, M, K, N](Node& nd) {
    const Tensor& av = nd.parents[0]->value;
    const Tensor& bv = nd.parents[1]->value;
    for (int i = 0; i < B; ++i) {
      const float* go = nd.grad.data() + static_cast<int64_t>(i) * M * N;
      if (nd.parents[0]->requires_grad) {
        Tensor& g = nd.parents[0]->ensure_grad();
        kernels::matmul_bt(go, bv.data() + static_cast<int64_t>(i) * K * N,
                           g.data() + static_cast<int64_t>(i) * M * K, M, N, K,
                           true);
      }
      if (nd.parents[1]->requires_grad) {
        Tensor& g = nd.parents[1]->ensure_grad();
        kernels::matmul_at(av.data() + static_cast<int64_t>(i) * M * K, go,
                           g.data() + static_cast<int64_t>(i) * K * N, K, M, N,
                           true);
      }
    }
  });
}

Var transpose_last2(const Var& x) {
  check(x.shape().size() == 3, "transpose_last2: rank must be 3");
  const int B = x.dim(0), M = x.dim(1), N = x.dim(2);
  Tensor out({B, N, M});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j)
        out[(static_cast<int64_t>(b) * N + j) * M + i] =
            x.val()[(static_cast<int64_t>(b) * M + i) * N + j];
  return make_op(std::move(out), {x}, [B, M, N](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
          g[(static_cast<int64_t>(b) * M + i) * N + j] +=
              nd.grad[(static_cast<int64_t>(b) * N + j) * M + i];
  });
}

Var softmax_lastdim(const Var& x) {
  const auto& s = x.shape();
  check(!s.empty(), "softmax: empty");
  const int N = s.back();
  const int64_t rows = x.numel() / N;
  Tensor out(s);
  for (int64_t r = 0; r < rows; ++r) {
    const float* xi = x.val().data() + r * N;
    float* yo = out.data() + r * N;
    float mx = xi[0];
    for (int i = 1; i < N; ++i) mx = std::max(mx, xi[i]);
    float z = 0.0f;
    for (int i = 0; i < N; ++i) {
      yo[i] = std::exp(xi[i] - mx);
      z += yo[i];
    }
    for (int i = 0; i < N; ++i) yo[i] /= z;
  }
  return make_op(std::move(out), {x}, [N, rows](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const float* y = nd.value.data() + r * N;
      const float* go = nd.grad.data() + r * N;
      float dot = 0.0f;
      for (int i = 0; i < N; ++i) dot += y[i] * go[i];
      for (int i = 0; i < N; ++i) g[r * N + i] += y[i] * (go[i] - dot);
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check(x.shape().size() == 4 && w.shape().size() == 4, "conv2d: bad rank");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  check(w.dim(1) == C, "conv2d: channel mismatch");
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  const int CKK = C * KH * KW;
  const int64_t P = static_cast<int64_t>(OH) * OW;
  Tensor out({N, O, OH, OW});
  std::vector<float> col(static_cast<size_t>(CKK) * P);
  for (int n = 0; n < N; ++n) {
    kernels::im2col2d(x.val().data() + static_cast<int64_t>(n) * C * H * W,
                      col.data(), C, H, W, KH, KW, stride, pad, OH, OW);
    float* on = out.data() + static_cast<int64_t>(n) * O * P;
    kernels::matmul(w.val().data(), col.data(), on, O, CKK, static_cast<int>(P));
    for (int o = 0; o < O; ++o) {
      const float bv = b.val()[o];
      for (int64_t i = 0; i < P; ++i) on[static_cast<int64_t>(o) * P + i] += bv;
    }
  }
  return make_op(
      std::move(out), {x, w, b},
      [N, C, H, W, O, KH, KW, stride, pad, OH, OW, CKK, P](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& wv = nd.parents[1]->value;
        std::vector<float> col(static_cast<size_t>(CKK) * P);
        std::vector<float> dcol(static_cast<size_t>(CKK) * P);
        for (int n = 0; n < N; ++n) {
          const float* go = nd.grad.data() + static_cast<int64_t>(n) * O * P;
          if (nd.parents[1]->requires_grad) {
            kernels::im2col2d(xv.data() + static_cast<int64_t>(n) * C * H * W,
                              col.data(), C, H, W, KH, KW, stride, pad, OH,
                              OW);
            Tensor& gw = nd.parents[1]->ensure_grad();
            kernels::matmul_bt(go, col.data(), gw.data(), O, static_cast<int>(P),
                               CKK, true);
          }
          if (nd.parents[0]->requires_grad) {
            Tensor& gx = nd.parents[0]->ensure_grad();
            kernels::matmul_at(wv.data(), go, dcol.data(), CKK, O,
                               static_cast<int>(P), false);
            kernels::col2im2d(dcol.data(),
                              gx.data() + static_cast<int64_t>(n) * C * H * W,
                              C, H, W, KH, KW, stride, pad, OH, OW);
          }
          if (nd.parents[2]->requires_grad) {
            Tensor& gb = nd.parents[2]->ensure_grad();
            for (int o = 0; o < O; ++o) {
              float acc = 0.0f;
              for (int64_t i = 0; i < P; ++i) acc += go[static_cast<int64_t>(o) * P + i];
              gb[o] += acc;
            }
          }
        }
      });
}

Var conv3d(const Var& x, const Var& w, const Var& b, int stride_t,
           int stride_s, int pad_t, int pad_s) {
  check(x.shape().size() == 5 && w.shape().size() == 5, "conv3d: bad rank");
  const int N = x.dim(0), C = x.dim(1), T = x.dim(2), H = x.dim(3),
            W = x.dim(4);
  const int O = w.dim(0), KT = w.dim(2), KH = w.dim(3), KW = w.dim(4);
  check(w.dim(1) == C, "conv3d: channel mismatch");
  const int OT = (T + 2 * pad_t - KT) / stride_t + 1;
  const int OH = (H + 2 * pad_s - KH) / stride_s + 1;
  const int OW = (W + 2 * pad_s - KW) / stride_s + 1;
  const int CK = C * KT * KH * KW;
  const int64_t P = static_cast<int64_t>(OT) * OH * OW;
  const int64_t in_sz = static_cast<int64_t>(C) * T * H * W;
  Tensor out({N, O, OT, OH, OW});
  std::vector<float> col(static_cast<size_t>(CK) * P);
  for (int n = 0; n < N; ++n) {
    kernels::im2col3d(x.val().data() + n * in_sz, col.data(), C, T, H, W, KT,
                      KH, KW, stride_t, stride_s, pad_t, pad_s, OT, OH, OW);
    float* on = out.data() + static_cast<int64_t>(n) * O * P;
    kernels::matmul(w.val().data(), col.data(), on, O, CK, static_cast<int>(P));
    for (int o = 0; o < O; ++o) {
      const float bv = b.val()[o];
      for (int64_t i = 0; i < P; ++i) on[static_cast<int64_t>(o) * P + i] += bv;
    }
  }
  return make_op(
      std::move(out), {x, w, b},
      [N, C, T, H, W, O, KT, KH, KW, stride_t, stride_s, pad_t, pad_s, OT, OH,
       OW, CK, P, in_sz](Node& nd) {
        const Tensor& xv = nd.parents[0]->value;
        const Tensor& wv = nd.parents[1]->value;
        std::vector<float> col(static_cast<size_t>(CK) * P);
        std::vector<float> dcol(static_cast<size_t>(CK) * P);
        for (int n = 0; n < N; ++n) {
          const float* go = nd.grad.data() + static_cast<int64_t>(n) * O * P;
          if (nd.parents[1]->requires_grad) {
            kernels::im2col3d(xv.data() + n * in_sz, col.data(), C, T, H, W,
                              KT, KH, KW, stride_t, stride_s, pad_t, pad_s, OT,
                              OH, OW);
            Tensor& gw = nd.parents[1]->ensure_grad();
            kernels::matmul_bt(go, col.data(), gw.data(), O, static_cast<int>(P),
                               CK, true);
          }
          if (nd.parents[0]->requires_grad) {
            Tensor& gx = nd.parents[0]->ensure_grad();
            kernels::matmul_at(wv.data(), go, dcol.data(), CK, O,
                               static_cast<int>(P), false);
            kernels::col2im3d(dcol.data(), gx.data() + n * in_sz, C, T, H, W,
                              KT, KH, KW, stride_t, stride_s, pad_t, pad_s, OT,
                              OH, OW);
          }
          if (nd.parents[2]->requires_grad) {
            Tensor& gb = nd.parents[2]->ensure_grad();
            for (int o = 0; o < O; ++o) {
              float acc = 0.0f;
              for (int64_t i = 0; i < P; ++i) acc += go[static_cast<int64_t>(o) * P + i];
              gb[o] += acc;
            }
          }
        }
      });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups,
               float eps) {
  const auto& s = x.shape();
  check(s.size() >= 3, "group_norm: rank must be >= 3");
  const int N = s[0], C = s[1];
  check(C % groups == 0, "group_norm: channels not divisible by groups");
  check(gamma.dim(0) == C && beta.dim(0) == C, "group_norm: affine mismatch");
  const int64_t S = spatial_numel(s);
  const int cg = C / groups;
  const int64_t gsz = cg * S;
  Tensor out(s);
  // Cache per-(n,group) inverse std and mean for backward.
  auto stats = std::make_shared<std::vector<float>>(static_cast<size_t>(N) * groups * 2);
  for (int n = 0; n < N; ++n) {
    for (int g = 0; g < groups; ++g) {
      const int64_t base = (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
      double mean = 0.0;
      for (int64_t i = 0; i < gsz; ++i) mean += x.val()[base + i];
      mean /= static_cast<double>(gsz);
      double var = 0.0;
      for (int64_t i = 0; i < gsz; ++i) {
        const double d = x.val()[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsz);
      const float istd = 1.0f / std::sqrt(static_cast<float>(var) + eps);
      (*stats)[(static_cast<size_t>(n) * groups + g) * 2] = static_cast<float>(mean);
      (*stats)[(static_cast<size_t>(n) * groups + g) * 2 + 1] = istd;
      for (int c = 0; c < cg; ++c) {
        const int ch = g * cg + c;
        const float ga = gamma.val()[ch], be = beta.val()[ch];
        const int64_t cb = base + static_cast<int64_t>(c) * S;
        for (int64_t i = 0; i < S; ++i)
          out[cb + i] = (x.val()[cb + i] - static_cast<float>(mean)) * istd * ga + be;
      }
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [N, C, S, groups, cg, gsz, stats](Node& nd) {
    const Tensor& xv = nd.parents[0]->value;
    const Tensor& ga = nd.parents[1]->value;
    const bool need_dx = nd.parents[0]->requires_grad;
    const bool need_dg = nd.parents[1]->requires_grad;
    const bool need_db = nd.parents[2]->requires_grad;
    for (int n = 0; n < N; ++n) {
      for (int g = 0; g < groups; ++g) {
        const float mean = (*stats)[(static_cast<size_t>(n) * groups + g) * 2];
        const float istd = (*stats)[(static_cast<size_t>(n) * groups + g) * 2 + 1];
        const int64_t base = (static_cast<int64_t>(n) * C + static_cast<int64_t>(g) * cg) * S;
        if (need_dg || need_db) {
          Tensor& dgamma = nd.parents[1]->ensure_grad();
          Tensor& dbeta = nd.parents[2]->ensure_grad();
          for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            const int64_t cb = base + static_cast<int64_t>(c) * S;
            float ag = 0.0f, ab = 0.0f;
            for (int64_t i = 0; i < S; ++i) {
              const float xh = (xv[cb + i] - mean) * istd;
              ag += nd.grad[cb + i] * xh;
              ab += nd.grad[cb + i];
            }
            if (need_dg) dgamma[ch] += ag;
            if (need_db) dbeta[ch] += ab;
          }
        }
        if (need_dx) {
          Tensor& dx = nd.parents[0]->ensure_grad();
          // dxhat = dy * gamma; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
          double m1 = 0.0, m2 = 0.0;
          for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            const int64_t cb = base + static_cast<int64_t>(c) * S;
            for (int64_t i = 0; i < S; ++i) {
              const float dxh = nd.grad[cb + i] * ga[ch];
              const float xh = (xv[cb + i] - mean) * istd;
              m1 += dxh;
              m2 += static_cast<double>(dxh) * xh;
            }
          }
          m1 /= static_cast<double>(gsz);
          m2 /= static_cast<double>(gsz);
          for (int c = 0; c < cg; ++c) {
            const int ch = g * cg + c;
            const int64_t cb = base + static_cast<int64_t>(c) * S;
            for (int64_t i = 0; i < S; ++i) {
              const float dxh = nd.grad[cb + i] * ga[ch];
              const float xh = (xv[cb + i] - mean) * istd;
              dx[cb + i] += istd * (dxh - static_cast<float>(m1) -
                                    xh * static_cast<float>(m2));
            }
          }
        }
      }
    }
  });
}

namespace {

Var upsample2x_impl(const Var& x, bool volumetric) {
  const auto& s = x.shape();
  const int rank = static_cast<int>(s.size());
  check((volumetric && rank == 5) || (!volumetric && rank == 4),
        "upsample2x: bad rank");
  const int H = s[rank - 2], W = s[rank - 1];
  const int64_t outer = x.numel() / (static_cast<int64_t>(H) * W);
  std::vector<int> os = s;
  os[rank - 2] = H * 2;
  os[rank - 1] = W * 2;
  Tensor out(os);
  for (int64_t o = 0; o < outer; ++o) {
    const float* src = x.val().data() + o * H * W;
    float* dst = out.data() + o * H * W * 4;
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        const float v = src[static_cast<int64_t>(y) * W + xx];
        float* d = dst + (static_cast<int64_t>(2 * y) * 2 * W + 2 * xx);
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
  }
  return make_op(std::move(out), {x}, [outer, H, W](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      float* dst = g.data() + o * H * W;
      const float* src = nd.grad.data() + o * H * W * 4;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const float* su = src + (static_cast<int64_t>(2 * y) * 2 * W + 2 * xx);
          dst[static_cast<int64_t>(y) * W + xx] +=
              su[0] + su[1] + su[2 * W] + su[2 * W + 1];
        }
    }
  });
}

}  // namespace

Var upsample2x_2d(const Var& x) { return upsample2x_impl(x, false); }
Var upsample2x_3d(const Var& x) { return upsample2x_impl(x, true); }

Var avg_pool2x_2d(const Var& x) {
  const auto& s = x.shape();
  check(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0,
        "avg_pool2x: bad shape");
  const int H = s[2], W = s[3];
  const int64_t outer = x.numel() / (static_cast<int64_t>(H) * W);
  Tensor out({s[0], s[1], H / 2, W / 2});
  for (int64_t o = 0; o < outer; ++o) {
    const float* src = x.val().data() + o * H * W;
    float* dst = out.data() + o * (H / 2) * (W / 2);
    for (int y = 0; y < H / 2; ++y)
      for (int xx = 0; xx < W / 2; ++xx) {
        const float* su = src + (static_cast<int64_t>(2 * y) * W + 2 * xx);
        dst[static_cast<int64_t>(y) * (W / 2) + xx] =
            0.25f * (su[0] + su[1] + su[W] + su[W + 1]);
      }
  }
  return make_op(std::move(out), {x}, [outer, H, W](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int64_t o = 0; o < outer; ++o) {
      float* dst = g.data() + o * H * W;
      const float* src = nd.grad.data() + o * (H / 2) * (W / 2);
      for (int y = 0; y < H / 2; ++y)
        for (int xx = 0; xx < W / 2; ++xx) {
          const float v = 0.25f * src[static_cast<int64_t>(y) * (W / 2) + xx];
          float* d = dst + (static_cast<int64_t>(2 * y) * W + 2 * xx);
          d[0] += v;
          d[1] += v;
          d[W] += v;
          d[W + 1] += v;
        }
    }
  });
}

Var mean_all(const Var& x) {
  const int64_t n = x.numel();
  check(n > 0, "mean_all: empty");
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += x.val()[i];
  Tensor out({1});
  out[0] = static_cast<float>(acc / static_cast<double>(n));
  return make_op(std::move(out), {x}, [n](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    const float s = nd.grad[0] / static_cast<float>(n);
    for (int64_t i = 0; i < n; ++i) g[i] += s;
  });
}

Var global_avg_pool(const Var& x) {
  const auto& s = x.shape();
  check(s.size() >= 3, "global_avg_pool: rank must be >= 3");
  const int N = s[0], C = s[1];
  const int64_t S = spatial_numel(s);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const int64_t base = (static_cast<int64_t>(n) * C + c) * S;
      double acc = 0.0;
      for (int64_t i = 0; i < S; ++i) acc += x.val()[base + i];
      out[static_cast<int64_t>(n) * C + c] = static_cast<float>(acc / static_cast<double>(S));
    }
  return make_op(std::move(out), {x}, [N, C, S](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const float s = nd.grad[static_cast<int64_t>(n) * C + c] / static_cast<float>(S);
        const int64_t base = (static_cast<int64_t>(n) * C + c) * S;
        for (int64_t i = 0; i < S; ++i) g[base + i] += s;
      }
  });
}

Var l1_loss(const Var& a, const Var& b) {
  check_same_shape(a, b, "l1_loss");
  const int64_t n = a.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(a.val()[i] - b.val()[i]);
  Tensor out({1});
  out[0] = static_cast<float>(acc / static_cast<double>(n));
  return make_op(std::move(out), {a, b}, [n](Node& nd) {
    const Tensor& av = nd.parents[0]->value;
    const Tensor& bv = nd.parents[1]->value;
    const float s = nd.grad[0] / static_cast<float>(n);
    for (int pi = 0; pi < 2; ++pi) {
      if (!nd.parents[pi]->requires_grad) continue;
      Tensor& g = nd.parents[pi]->ensure_grad();
      const float sign = pi == 0 ? 1.0f : -1.0f;
      for (int64_t i = 0; i < n; ++i) {
        const float d = av[i] - bv[i];
        g[i] += s * sign * (d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f));
      }
    }
  });
}

Var mse_loss(const Var& a, const Var& b) {
  check_same_shape(a, b, "mse_loss");
  const int64_t n = a.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.val()[i]) - b.val()[i];
    acc += d * d;
  }
  Tensor out({1});
  out[0] = static_cast<float>(acc / static_cast<double>(n));
  return make_op(std::move(out), {a, b}, [n](Node& nd) {
    const Tensor& av = nd.parents[0]->value;
    const Tensor& bv = nd.parents[1]->value;
    const float s = 2.0f * nd.grad[0] / static_cast<float>(n);
    for (int pi = 0; pi < 2; ++pi) {
      if (!nd.parents[pi]->requires_grad) continue;
      Tensor& g = nd.parents[pi]->ensure_grad();
      const float sign = pi == 0 ? 1.0f : -1.0f;
      for (int64_t i = 0; i < n; ++i)
        g[i] += s * sign * (av[i] - bv[i]);
    }
  });
}

Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels) {
  check(logits.shape().size() == 2 &&
            logits.dim(0) == static_cast<int>(labels.size()),
        "cross_entropy: bad shapes");
  const int N = logits.dim(0), C = logits.dim(1);
  Tensor out({1});
  double acc = 0.0;
  for (int n = 0; n < N; ++n) {
    const float* l = logits.val().data() + static_cast<int64_t>(n) * C;
    float mx = l[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, l[c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(l[c]) - mx);
    acc += std::log(z) + mx - l[labels[static_cast<size_t>(n)]];
  }
  out[0] = static_cast<float>(acc / N);
  return make_op(std::move(out), {logits}, [N, C, labels](Node& nd) {
    const Tensor& lv = nd.parents[0]->value;
    Tensor& g = nd.parents[0]->ensure_grad();
    const float s = nd.grad[0] / static_cast<float>(N);
    for (int n = 0; n < N; ++n) {
      const float* l = lv.data() + static_cast<int64_t>(n) * C;
      float mx = l[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, l[c]);
      double z = 0.0;
      for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(l[c]) - mx);
      for (int c = 0; c < C; ++c) {
        const float p = static_cast<float>(std::exp(static_cast<double>(l[c]) - mx) / z);
        g[static_cast<int64_t>(n) * C + c] +=
            s * (p - (c == labels[static_cast<size_t>(n)] ? 1.0f : 0.0f));
      }
    }
  });
}

Var warp_bilinear(const Var& z, const Var& f, const Var& m) {
  const auto& zs = z.shape();
  check(zs.size() == 4, "warp: z must be [N,C,H,W]");
  const int N = zs[0], C = zs[1], H = zs[2], W = zs[3];
  check(f.shape() == std::vector<int>({N, 2, H, W}),
        "warp: flow must be [N,2,H,W] matching z");
  check(m.shape() == std::vector<int>({N, 1, H, W}),
        "warp: occlusion must be [N,1,H,W] matching z");
  for (int64_t i = 0; i < f.numel(); ++i)
    check(std::isfinite(f.val()[i]), "warp: non-finite flow");
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor out(zs);
  for (int n = 0; n < N; ++n) {
    const float* fx = f.val().data() + (static_cast<int64_t>(n) * 2 + 0) * plane;
    const float* fy = f.val().data() + (static_cast<int64_t>(n) * 2 + 1) * plane;
    const float* mm = m.val().data() + static_cast<int64_t>(n) * plane;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const int64_t p = static_cast<int64_t>(y) * W + x;
        float sx = x + fx[p];
        float sy = y + fy[p];
        sx = std::min(std::max(sx, 0.0f), static_cast<float>(W - 1));
        sy = std::min(std::max(sy, 0.0f), static_cast<float>(H - 1));
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const float wx = sx - x0;
        const float wy = sy - y0;
        const int x0c = std::min(std::max(x0, 0), W - 1);
        const int x1c = std::min(x0 + 1, W - 1);
        const int y0c = std::min(std::max(y0, 0), H - 1);
        const int y1c = std::min(y0 + 1, H - 1);
        const float mv = mm[p];
        for (int c = 0; c < C; ++c) {
          const float* zc = z.val().data() + (static_cast<int64_t>(n) * C + c) * plane;
          const float v = (1 - wy) * ((1 - wx) * zc[static_cast<int64_t>(y0c) * W + x0c] +
                                      wx * zc[static_cast<int64_t>(y0c) * W + x1c]) +
                          wy * ((1 - wx) * zc[static_cast<int64_t>(y1c) * W + x0c] +
                                wx * zc[static_cast<int64_t>(y1c) * W + x1c]);
          out[(static_cast<int64_t>(n) * C + c) * plane + p] = mv * v;
        }
      }
    }
  }
  return make_op(std::move(out), {z, f, m}, [N, C, H, W, plane](Node& nd) {
    const Tensor& zv = nd.parents[0]->value;
    const Tensor& fv = nd.parents[1]->value;
    const Tensor& mv = nd.parents[2]->value;
    const bool need_dz = nd.parents[0]->requires_grad;
    const bool need_df = nd.parents[1]->requires_grad;
    const bool need_dm = nd.parents[2]->requires_grad;
    if (need_dz) nd.parents[0]->ensure_grad();
    if (need_df) nd.parents[1]->ensure_grad();
    if (need_dm) nd.parents[2]->ensure_grad();
    for (int n = 0; n < N; ++n) {
      const float* fx = fv.data() + (static_cast<int64_t>(n) * 2 + 0) * plane;
      const float* fy = fv.data() + (static_cast<int64_t>(n) * 2 + 1) * plane;
      const float* mm = mv.data() + static_cast<int64_t>(n) * plane;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const int64_t p = static_cast<int64_t>(y) * W + x;
          const float rx = x + fx[p];
          const float ry = y + fy[p];
          const bool clx = rx <= 0.0f || rx >= static_cast<float>(W - 1);
          const bool cly = ry <= 0.0f || ry >= static_cast<float>(H - 1);
          const float sx = std::min(std::max(rx, 0.0f), static_cast<float>(W - 1));
          const float sy = std::min(std::max(ry, 0.0f), static_cast<float>(H - 1));
          const int x0 = static_cast<int>(std::floor(sx));
          const int y0 = static_cast<int>(std::floor(sy));
          const float wx = sx - x0;
          const float wy = sy - y0;
          const int x0c = std::min(std::max(x0, 0), W - 1);
          const int x1c = std::min(x0 + 1, W - 1);
          const int y0c = std::min(std::max(y0, 0), H - 1);
          const int y1c = std::min(y0 + 1, H - 1);
          const float mval = mm[p];
          float dm_acc = 0.0f, dsx_acc = 0.0f, dsy_acc = 0.0f;
          for (int c = 0; c < C; ++c) {
            const int64_t cb = (static_cast<int64_t>(n) * C + c) * plane;
            const float* zc = zv.data() + cb;
            const float go = nd.grad[cb + p];
            const float z00 = zc[static_cast<int64_t>(y0c) * W + x0c];
            const float z01 = zc[static_cast<int64_t>(y0c) * W + x1c];
            const float z10 = zc[static_cast<int64_t>(y1c) * W + x0c];
            const float z11 = zc[static_cast<int64_t>(y1c) * W + x1c];
            const float v = (1 - wy) * ((1 - wx) * z00 + wx * z01) +
                            wy * ((1 - wx) * z10 + wx * z11);
            dm_acc += go * v;
            if (need_dz) {
              Tensor& gz = nd.parents[0]->grad;
              const float gm = go * mval;
              gz[cb + static_cast<int64_t>(y0c) * W + x0c] += gm * (1 - wy) * (1 - wx);
              gz[cb + static_cast<int64_t>(y0c) * W + x1c] += gm * (1 - wy) * wx;
              gz[cb + static_cast<int64_t>(y1c) * W + x0c] += gm * wy * (1 - wx);
              gz[cb + static_cast<int64_t>(y1c) * W + x1c] += gm * wy * wx;
            }
            if (need_df) {
              dsx_acc += go * mval * ((1 - wy) * (z01 - z00) + wy * (z11 - z10));
              dsy_acc += go * mval * ((1 - wx) * (z10 - z00) + wx * (z11 - z01));
            }
          }
          if (need_dm) nd.parents[2]->grad[static_cast<int64_t>(n) * plane + p] += dm_acc;
          if (need_df) {
            Tensor& gf = nd.parents[1]->grad;
            if (!clx) gf[(static_cast<int64_t>(n) * 2 + 0) * plane + p] += dsx_acc;
            if (!cly) gf[(static_cast<int64_t>(n) * 2 + 1) * plane + p] += dsy_acc;
          }
        }
      }
    }
  });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
  check(table.shape().size() == 2, "embedding: table must be [V,D]");
  const int V = table.dim(0), D = table.dim(1);
  const int N = static_cast<int>(ids.size());
  for (int id : ids) check(id >= 0 && id < V, "embedding: id out of range");
  Tensor out({N, D});
  for (int n = 0; n < N; ++n)
    std::memcpy(out.data() + static_cast<int64_t>(n) * D,
                table.val().data() + static_cast<int64_t>(ids[static_cast<size_t>(n)]) * D,
                sizeof(float) * D);
  return make_op(std::move(out), {table}, [N, D, ids](Node& nd) {
    Tensor& g = nd.parents[0]->ensure_grad();
    for (int n = 0; n < N; ++n) {
      float* dst = g.data() + static_cast<int64_t>(ids[static_cast<size_t>(n)]) * D;
      const float* src = nd.grad.data() + static_cast<int64_t>(n) * D;
      for (int d = 0; d < D; ++d) dst[d] += src[d];
    }
  });
}

}  // namespace lfdm::ops

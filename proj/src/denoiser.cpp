#include "lfdm/denoiser.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

using nlohmann::json;

namespace lfdm {

Tensor sinusoidal_embedding(const std::vector<int>& steps, int dim) {
  check(dim % 2 == 0, "sinusoidal embedding dim must be even");
  const int n = static_cast<int>(steps.size());
  Tensor out({n, dim});
  const int half = dim / 2;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < half; ++j) {
      const double freq =
          std::exp(-std::log(10000.0) * static_cast<double>(j) / half);
      const double a = steps[static_cast<size_t>(i)] * freq;
      out[static_cast<int64_t>(i) * dim + j] = static_cast<float>(std::sin(a));
      out[static_cast<int64_t>(i) * dim + half + j] = static_cast<float>(std::cos(a));
    }
  }
  return out;
}

}  // namespace lfdm

namespace lfdm::diffusion {

Var Denoiser3D::ResBlock3d::fwd(const Var& x, const Var& emb) const {
  Var h = c1.fwd(ops::silu(n1.fwd(x)));
  h = ops::emb_add_channel(h, emb_proj.fwd(ops::silu(emb)));
  h = c2.fwd(ops::silu(n2.fwd(h)));
  Var s = has_skip ? skip.fwd(x) : x;
  return ops::add(s, h);
}

Var Denoiser3D::Attention3d::fwd(const Var& x) const {
  const int N = x.dim(0), C = x.dim(1);
  const int S = x.dim(2) * x.dim(3) * x.dim(4);
  Var h = norm.fwd(x);
  Var qv = ops::reshape(q.fwd(h), {N, C, S});
  Var kv = ops::reshape(k.fwd(h), {N, C, S});
  Var vv = ops::reshape(v.fwd(h), {N, C, S});
  Var scores = ops::scale(ops::bmm(ops::transpose_last2(qv), kv),
                          1.0f / std::sqrt(static_cast<float>(C)));
  Var attn = ops::softmax_lastdim(scores);  // [N,S_out,S_in]
  Var out = ops::bmm(vv, ops::transpose_last2(attn));
  out = ops::reshape(out, x.shape());
  return ops::add(x, proj.fwd(out));
}

Denoiser3D::Denoiser3D(const DenoiserConfig& cfg, uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(init_seed, 0xd3d));
  const int base = cfg_.base_channels;
  const int emb = cfg_.emb_dim;

  class_table_ =
      ps_.make("cond.class_table", {cfg_.num_classes + 1, emb}, rng, 0.02f);
  time_mlp1_ = LinearLayer::create(ps_, "cond.time1", emb, emb, rng);
  time_mlp2_ = LinearLayer::create(ps_, "cond.time2", emb, emb, rng);

  auto make_res = [&](const std::string& name, int cin, int cout) {
    ResBlock3d r;
    r.n1 = GroupNormLayer::create(ps_, name + ".n1", cin, 8);
    r.c1 = Conv3d::create(ps_, name + ".c1", cin, cout, 3, 3, 1, 1, rng);
    r.emb_proj = LinearLayer::create(ps_, name + ".emb", emb, cout, rng);
    r.n2 = GroupNormLayer::create(ps_, name + ".n2", cout, 8);
    r.c2 = Conv3d::create(ps_, name + ".c2", cout, cout, 3, 3, 1, 1, rng, 0.0f);
    if (cin != cout) {
      r.skip = Conv3d::create(ps_, name + ".skip", cin, cout, 1, 1, 1, 1, rng);
      r.has_skip = true;
    }
    return r;
  };

  for (int m : cfg_.channel_multipliers) level_channels_.push_back(base * m);
  const int levels = static_cast<int>(level_channels_.size());

  stem_ = Conv3d::create(ps_, "stem", 3 + cfg_.c_z, level_channels_[0], 3, 3,
                         1, 1, rng);
  int ch = level_channels_[0];
  for (int i = 0; i < levels; ++i) {
    down_blocks_.push_back(
        make_res("down" + std::to_string(i), ch, level_channels_[static_cast<size_t>(i)]));
    ch = level_channels_[static_cast<size_t>(i)];
    if (i + 1 < levels) {
      Conv3d d = Conv3d::create(ps_, "downsample" + std::to_string(i), ch, ch,
                                1, 3, 1, 2, rng);
      down_samplers_.push_back(d);
    }
  }
  mid1_ = make_res("mid1", ch, ch);
  if (cfg_.attention) {
    mid_attn_.norm = GroupNormLayer::create(ps_, "attn.norm", ch, 8);
    mid_attn_.q = Conv3d::create(ps_, "attn.q", ch, ch, 1, 1, 1, 1, rng);
    mid_attn_.k = Conv3d::create(ps_, "attn.k", ch, ch, 1, 1, 1, 1, rng);
    mid_attn_.v = Conv3d::create(ps_, "attn.v", ch, ch, 1, 1, 1, 1, rng);
    mid_attn_.proj = Conv3d::create(ps_, "attn.proj", ch, ch, 1, 1, 1, 1, rng, 0.0f);
  }
  mid2_ = make_res("mid2", ch, ch);
  for (int i = levels - 1; i >= 0; --i) {
    // Skip connection concatenates the matching down-path activation.
    const int cout = level_channels_[static_cast<size_t>(i)];
    up_blocks_.push_back(
        make_res("up" + std::to_string(i), ch + cout, cout));
    ch = cout;
    if (i > 0) {
      up_convs_.push_back(Conv3d::create(ps_, "upconv" + std::to_string(i), ch,
                                         level_channels_[static_cast<size_t>(i) - 1], 1, 3,
                                         1, 1, rng));
      ch = level_channels_[static_cast<size_t>(i) - 1];
    }
  }
  out_norm_ = GroupNormLayer::create(ps_, "out.norm", ch, 8);
  out_conv_ = Conv3d::create(ps_, "out.conv", ch, 3, 3, 3, 1, 1, rng, 0.0f);
}

Var Denoiser3D::forward(const Var& s_t, const std::vector<int>& timesteps,
                        const Tensor& z0, const std::vector<int>& labels) const {
  check(s_t.shape().size() == 5 && s_t.dim(1) == 3,
        "denoiser: s_t must be [N,3,K,H,W]");
  const int N = s_t.dim(0), K = s_t.dim(2), H = s_t.dim(3), W = s_t.dim(4);
  check(z0.rank() == 4 && z0.dim(0) == N && z0.dim(1) == cfg_.c_z &&
            z0.dim(2) == H && z0.dim(3) == W,
        "denoiser: z0 must be [N,C_z,H,W] matching s_t");
  check(static_cast<int>(timesteps.size()) == N &&
            static_cast<int>(labels.size()) == N,
        "denoiser: timesteps/labels must match batch");

  // Tile z0 along the time axis; the conditioning latent carries no gradient.
  Tensor z0t({N, cfg_.c_z, K, H, W});
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < cfg_.c_z; ++c) {
      const float* src = z0.data() + (static_cast<int64_t>(n) * cfg_.c_z + c) * plane;
      for (int t = 0; t < K; ++t)
        std::copy(src, src + plane,
                  z0t.data() + ((static_cast<int64_t>(n) * cfg_.c_z + c) * K + t) * plane);
    }

  std::vector<int> rows;
  for (int l : labels) {
    check(l == kNullLabel || (l >= 0 && l < cfg_.num_classes),
          "denoiser: label out of range");
    rows.push_back(l == kNullLabel ? cfg_.num_classes : l);
  }
  Var emb = ops::add(
      time_mlp2_.fwd(ops::silu(time_mlp1_.fwd(
          Var(sinusoidal_embedding(timesteps, cfg_.emb_dim))))),
      ops::embedding(class_table_, rows));

  Var h = stem_.fwd(ops::concat_channels({s_t, Var(std::move(z0t))}));
  std::vector<Var> skips;
  const int levels = static_cast<int>(level_channels_.size());
  for (int i = 0; i < levels; ++i) {
    h = down_blocks_[static_cast<size_t>(i)].fwd(h, emb);
    skips.push_back(h);
    if (i + 1 < levels) {
      check(h.dim(3) >= 2 && h.dim(4) >= 2,
            "denoiser: spatial size too small for configured depth");
      h = down_samplers_[static_cast<size_t>(i)].fwd(h);
    }
  }
  h = mid1_.fwd(h, emb);
  if (cfg_.attention) h = mid_attn_.fwd(h);
  h = mid2_.fwd(h, emb);
  for (int j = 0; j < levels; ++j) {
    const int i = levels - 1 - j;
    h = ops::concat_channels({h, skips[static_cast<size_t>(i)]});
    h = up_blocks_[static_cast<size_t>(j)].fwd(h, emb);
    if (i > 0) h = up_convs_[static_cast<size_t>(j)].fwd(ops::upsample2x_3d(h));
  }
  return out_conv_.fwd(ops::silu(out_norm_.fwd(h)));
}

Tensor Denoiser3D::eps(const Tensor& s_t, int t, const Tensor& z0,
                       int label) const {
  check(s_t.rank() == 4, "eps: s_t must be [3,K,H,W]");
  Var s(s_t.reshaped({1, s_t.dim(0), s_t.dim(1), s_t.dim(2), s_t.dim(3)}));
  Tensor z = z0.reshaped({1, z0.dim(0), z0.dim(1), z0.dim(2)});
  Var out = forward(s, {t}, z, {label});
  return out.val().reshaped(s_t.shape());
}

void Denoiser3D::save(const std::string& path) const {
  save_tensors(path, ps_.names(), ps_.params());
}

void Denoiser3D::load(const std::string& path) {
  load_tensors(path, ps_.names(), const_cast<std::vector<Var>&>(ps_.params()));
}

namespace {
json dn_config_to_json(const DenoiserConfig& c) {
  return json{{"base_channels", c.base_channels},
              {"channel_multipliers", c.channel_multipliers},
              {"c_z", c.c_z},
              {"emb_dim", c.emb_dim},
              {"num_classes", c.num_classes},
              {"attention", c.attention}};
}
}  // namespace

void save_denoiser_metadata(const std::string& ckpt_path,
                            const DenoiserConfig& cfg, int epoch,
                            uint64_t seed, uint64_t config_hash,
                            const Stage2Meta& meta) {
  json j;
  j["stage"] = "dm";
  j["format_version"] = 1;
  j["epoch"] = epoch;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["flow_norm_constant"] = meta.flow_norm_constant;
  j["volume_len"] = meta.volume_len;
  j["schedule_T"] = meta.schedule_T;
  j["latent_size"] = meta.latent_size;
  j["config"] = dn_config_to_json(cfg);
  std::ofstream f(ckpt_path + ".json");
  check(f.good(), "cannot write checkpoint metadata: " + ckpt_path + ".json");
  f << j.dump(2) << "\n";
}

DenoiserConfig load_denoiser_config(const std::string& ckpt_path) {
  std::ifstream f(ckpt_path + ".json");
  check(f.good(), "missing checkpoint metadata: " + ckpt_path + ".json");
  json j;
  f >> j;
  check(j.at("stage") == "dm", "not a stage-two checkpoint: " + ckpt_path);
  const json& c = j.at("config");
  DenoiserConfig cfg;
  cfg.base_channels = c.at("base_channels").get<int>();
  cfg.channel_multipliers = c.at("channel_multipliers").get<std::vector<int>>();
  cfg.c_z = c.at("c_z").get<int>();
  cfg.emb_dim = c.at("emb_dim").get<int>();
  cfg.num_classes = c.at("num_classes").get<int>();
  cfg.attention = c.at("attention").get<bool>();
  return cfg;
}

Stage2Meta load_denoiser_meta(const std::string& ckpt_path) {
  std::ifstream f(ckpt_path + ".json");
  check(f.good(), "missing checkpoint metadata: " + ckpt_path + ".json");
  json j;
  f >> j;
  Stage2Meta m;
  m.flow_norm_constant = j.at("flow_norm_constant").get<float>();
  m.volume_len = j.at("volume_len").get<int>();
  m.schedule_T = j.at("schedule_T").get<int>();
  m.latent_size = j.at("latent_size").get<int>();
  return m;
}

}  // namespace lfdm::diffusion

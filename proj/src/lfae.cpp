#include "lfdm/lfae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include "json.hpp"

using nlohmann::json;

namespace lfdm::lfae {

namespace {

json config_to_json(const LFAEConfig& c) {
  return json{{"c_z", c.c_z},
              {"enc_width", c.enc_width},
              {"flow_width", c.flow_width},
              {"dec_width", c.dec_width},
              {"dec_residual_blocks", c.dec_residual_blocks},
              {"use_occlusion", c.use_occlusion},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"lr", c.lr},
              {"lr_decay_epochs", c.lr_decay_epochs},
              {"lr_decay_factor", c.lr_decay_factor},
              {"pairs_per_clip", c.pairs_per_clip}};
}

LFAEConfig config_from_json(const json& j) {
  LFAEConfig c;
  c.c_z = j.at("c_z").get<int>();
  c.enc_width = j.at("enc_width").get<int>();
  c.flow_width = j.at("flow_width").get<int>();
  c.dec_width = j.at("dec_width").get<int>();
  c.dec_residual_blocks = j.at("dec_residual_blocks").get<int>();
  c.use_occlusion = j.at("use_occlusion").get<bool>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<float>();
  c.lr_decay_epochs = j.at("lr_decay_epochs").get<std::vector<int>>();
  c.lr_decay_factor = j.at("lr_decay_factor").get<float>();
  c.pairs_per_clip = j.at("pairs_per_clip").get<int>();
  return c;
}

}  // namespace

LFAE::LFAE(const LFAEConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(Rng::mix(init_seed, 0x1fae));
  const int w = cfg_.enc_width;
  const int fw = cfg_.flow_width;
  const int dw = cfg_.dec_width;
  const int cz = cfg_.c_z;

  enc_in_ = Conv2d::create(ps_, "enc.in", 3, w, 3, 1, 1, rng);
  enc_n1_ = GroupNormLayer::create(ps_, "enc.n1", w, 8);
  enc_d1_ = Conv2d::create(ps_, "enc.d1", w, 2 * w, 3, 2, 1, rng);
  enc_n2_ = GroupNormLayer::create(ps_, "enc.n2", 2 * w, 8);
  enc_d2_ = Conv2d::create(ps_, "enc.d2", 2 * w, 2 * w, 3, 2, 1, rng);
  enc_out_ = Conv2d::create(ps_, "enc.out", 2 * w, cz, 3, 1, 1, rng);

  fp_d0_ = Conv2d::create(ps_, "flow.d0", 6, fw, 3, 2, 1, rng);
  fp_n0_ = GroupNormLayer::create(ps_, "flow.n0", fw, 8);
  fp_d1_ = Conv2d::create(ps_, "flow.d1", fw, 2 * fw, 3, 2, 1, rng);
  fp_n1_ = GroupNormLayer::create(ps_, "flow.n1", 2 * fw, 8);
  fp_m1_ = Conv2d::create(ps_, "flow.m1", 2 * fw, 2 * fw, 3, 1, 1, rng);
  fp_nm1_ = GroupNormLayer::create(ps_, "flow.nm1", 2 * fw, 8);
  fp_d2_ = Conv2d::create(ps_, "flow.d2", 2 * fw, 2 * fw, 3, 2, 1, rng);
  fp_n2_ = GroupNormLayer::create(ps_, "flow.n2", 2 * fw, 8);
  fp_m2_ = Conv2d::create(ps_, "flow.m2", 2 * fw, 2 * fw, 3, 1, 1, rng);
  fp_nm2_ = GroupNormLayer::create(ps_, "flow.nm2", 2 * fw, 8);
  fp_u_ = Conv2d::create(ps_, "flow.u", 4 * fw, 2 * fw, 3, 1, 1, rng);
  fp_nu_ = GroupNormLayer::create(ps_, "flow.nu", 2 * fw, 8);
  // Zero-init flow head: training starts from the identity warp.
  fp_flow_ = Conv2d::create(ps_, "flow.head_f", 2 * fw, 2, 3, 1, 1, rng, 0.0f);
  fp_occ_ = Conv2d::create(ps_, "flow.head_m", 2 * fw, 1, 3, 1, 1, rng, 0.1f);
  for (int64_t i = 0; i < fp_occ_.b.numel(); ++i) fp_occ_.b.val()[i] = 2.0f;

  dec_in_ = Conv2d::create(ps_, "dec.in", cz, dw, 3, 1, 1, rng);
  for (int i = 0; i < cfg_.dec_residual_blocks; ++i) {
    const std::string base = "dec.res" + std::to_string(i);
    dec_res_na_.push_back(GroupNormLayer::create(ps_, base + ".na", dw, 8));
    dec_res_a_.push_back(Conv2d::create(ps_, base + ".a", dw, dw, 3, 1, 1, rng));
    dec_res_nb_.push_back(GroupNormLayer::create(ps_, base + ".nb", dw, 8));
    dec_res_b_.push_back(
        Conv2d::create(ps_, base + ".b", dw, dw, 3, 1, 1, rng, 0.0f));
  }
  dec_up1_ = Conv2d::create(ps_, "dec.up1", dw, dw / 2, 3, 1, 1, rng);
  dec_n1_ = GroupNormLayer::create(ps_, "dec.n1", dw / 2, 8);
  dec_up2_ = Conv2d::create(ps_, "dec.up2", dw / 2, dw / 4, 3, 1, 1, rng);
  dec_n2_ = GroupNormLayer::create(ps_, "dec.n2", dw / 4, 8);
  dec_out_ = Conv2d::create(ps_, "dec.out", dw / 4, 3, 3, 1, 1, rng);
}

Var LFAE::encode(const Var& x) const {
  check(x.shape().size() == 4 && x.dim(1) == 3, "encode: input must be [N,3,H,W]");
  check(x.dim(2) % 4 == 0 && x.dim(3) % 4 == 0,
        "encode: frame size must be divisible by 4");
  Var h = ops::relu(enc_n1_.fwd(enc_in_.fwd(x)));
  h = ops::relu(enc_n2_.fwd(enc_d1_.fwd(h)));
  h = ops::relu(enc_d2_.fwd(h));
  return enc_out_.fwd(h);
}

std::pair<Var, Var> LFAE::predict_flow(const Var& x_ref,
                                       const Var& x_dri) const {
  check(x_ref.shape() == x_dri.shape(), "predict_flow: frame shape mismatch");
  check(x_ref.dim(2) % 8 == 0 && x_ref.dim(3) % 8 == 0,
        "predict_flow: frame size must be divisible by 8");
  Var h = ops::concat_channels({x_ref, x_dri});
  Var d0 = ops::relu(fp_n0_.fwd(fp_d0_.fwd(h)));
  Var d1 = ops::relu(fp_n1_.fwd(fp_d1_.fwd(d0)));
  Var m1 = ops::relu(fp_nm1_.fwd(fp_m1_.fwd(d1)));
  Var d2 = ops::relu(fp_n2_.fwd(fp_d2_.fwd(m1)));
  Var m2 = ops::relu(fp_nm2_.fwd(fp_m2_.fwd(d2)));
  Var u = ops::concat_channels({ops::upsample2x_2d(m2), m1});
  u = ops::relu(fp_nu_.fwd(fp_u_.fwd(u)));
  Var flow = fp_flow_.fwd(u);
  Var occ = ops::sigmoid(fp_occ_.fwd(u));
  return {flow, occ};
}

Var LFAE::decode(const Var& z) const {
  check(z.shape().size() == 4 && z.dim(1) == cfg_.c_z,
        "decode: latent must be [N,C_z,Hz,Wz]");
  Var h = dec_in_.fwd(z);
  for (size_t i = 0; i < dec_res_a_.size(); ++i) {
    Var t = dec_res_a_[i].fwd(ops::relu(dec_res_na_[i].fwd(h)));
    t = dec_res_b_[i].fwd(ops::relu(dec_res_nb_[i].fwd(t)));
    h = ops::add(h, t);
  }
  h = ops::relu(dec_n1_.fwd(dec_up1_.fwd(ops::upsample2x_2d(h))));
  h = ops::relu(dec_n2_.fwd(dec_up2_.fwd(ops::upsample2x_2d(h))));
  return ops::sigmoid(dec_out_.fwd(h));
}

Var LFAE::reconstruct(const Var& x_ref, const Var& x_dri) const {
  Var z = encode(x_ref);
  auto [f, m] = predict_flow(x_ref, x_dri);
  if (!cfg_.use_occlusion) {
    m = Var(Tensor({x_ref.dim(0), 1, z.dim(2), z.dim(3)}, 1.0f));
  }
  Var warped = ops::warp_bilinear(z, f, m);
  return decode(warped);
}

std::vector<Var> LFAE::params_with_prefix(const std::string& prefix) const {
  std::vector<Var> out;
  for (size_t i = 0; i < ps_.names().size(); ++i)
    if (ps_.names()[i].rfind(prefix, 0) == 0) out.push_back(ps_.params()[i]);
  return out;
}

uint64_t LFAE::hash_prefix(const std::string& prefix) const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < ps_.names().size(); ++i) {
    if (ps_.names()[i].rfind(prefix, 0) != 0) continue;
    const auto& t = ps_.params()[i].val();
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (size_t b = 0; b < static_cast<size_t>(t.numel()) * sizeof(float); ++b) {
      h ^= bytes[b];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void LFAE::set_trainable_prefix(const std::string& prefix, bool trainable) {
  auto& names = ps_.names();
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i].rfind(prefix, 0) == 0)
      ps_.params()[i].set_requires_grad(trainable);
}

void LFAE::save(const std::string& path) const {
  save_tensors(path, ps_.names(), ps_.params());
}

void LFAE::load(const std::string& path) {
  load_tensors(path, ps_.names(), ps_.params());
}

Var reconstruction_loss(const Var& x_out, const Var& x_dri, int levels) {
  check(x_out.shape() == x_dri.shape(), "reconstruction_loss: shape mismatch");
  Var a = x_out, b = x_dri;
  Var total = ops::l1_loss(a, b);
  for (int l = 1; l < levels; ++l) {
    a = ops::avg_pool2x_2d(a);
    b = ops::avg_pool2x_2d(b);
    total = ops::add(total, ops::l1_loss(a, b));
  }
  return ops::scale(total, 1.0f / static_cast<float>(levels));
}

void save_lfae_metadata(const std::string& ckpt_path, const LFAEConfig& cfg,
                        int epoch, uint64_t seed, uint64_t config_hash) {
  json j;
  j["stage"] = "lfae";
  j["format_version"] = 1;
  j["epoch"] = epoch;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["config"] = config_to_json(cfg);
  std::ofstream f(ckpt_path + ".json");
  check(f.good(), "cannot write checkpoint metadata: " + ckpt_path + ".json");
  f << j.dump(2) << "\n";
}

LFAEConfig load_lfae_config(const std::string& ckpt_path) {
  std::ifstream f(ckpt_path + ".json");
  check(f.good(), "missing checkpoint metadata: " + ckpt_path + ".json");
  json j;
  f >> j;
  check(j.at("stage") == "lfae", "not a stage-one checkpoint: " + ckpt_path);
  return config_from_json(j.at("config"));
}

namespace {

Tensor stack_frames(const std::vector<const Tensor*>& frames) {
  const Tensor& f0 = *frames.front();
  Tensor out({static_cast<int>(frames.size()), f0.dim(0), f0.dim(1), f0.dim(2)});
  const int64_t sz = f0.numel();
  for (size_t i = 0; i < frames.size(); ++i)
    std::copy(frames[i]->data(), frames[i]->data() + sz,
              out.data() + static_cast<int64_t>(i) * sz);
  return out;
}

// Per-sample random color jitter: a channel permutation plus an affine map
// keeping values inside [0,1], applied identically to the reference and the
// driving frame. The toy palettes are few, so without this the model keys
// the decoder to the training subjects' colors and reconstructs held-out
// subjects poorly.
void color_jitter_pair(Tensor& refs, Tensor& dris, Rng& rng) {
  static const int kPerms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                   {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  const int b = refs.dim(0);
  const int64_t plane = static_cast<int64_t>(refs.dim(2)) * refs.dim(3);
  std::vector<float> tmp(static_cast<size_t>(3 * plane));
  for (int n = 0; n < b; ++n) {
    const int* pm = kPerms[rng.uniform_int(0, 5)];
    float a[3], c[3];
    for (int ch = 0; ch < 3; ++ch) {
      a[ch] = 0.5f + 0.5f * rng.uniform();
      c[ch] = (1.0f - a[ch]) * rng.uniform();
    }
    for (Tensor* t : {&refs, &dris}) {
      float* base = t->data() + static_cast<int64_t>(n) * 3 * plane;
      std::copy(base, base + 3 * plane, tmp.begin());
      for (int ch = 0; ch < 3; ++ch) {
        const float* src = tmp.data() + static_cast<int64_t>(pm[ch]) * plane;
        float* dst = base + static_cast<int64_t>(ch) * plane;
        for (int64_t p = 0; p < plane; ++p) dst[p] = a[ch] * src[p] + c[ch];
      }
    }
  }
}

}  // namespace

Stage1Result train_stage1(const data::DatasetManifest& manifest,
                          const LFAEConfig& cfg, Rng& rng,
                          const std::string& out_path, uint64_t config_hash) {
  cfg.validate();
  check(!manifest.train.empty(), "train split is empty");
  std::vector<data::VideoClip> clips;
  for (const auto& rec : manifest.train)
    clips.push_back(data::load_clip(manifest, rec));

  const uint64_t init_seed = rng.next_u64();
  LFAE model(cfg, init_seed);
  Adam opt(model.params().params(), cfg.lr);

  Stage1Result result;
  float lr = cfg.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (std::find(cfg.lr_decay_epochs.begin(), cfg.lr_decay_epochs.end(),
                  epoch) != cfg.lr_decay_epochs.end()) {
      lr *= cfg.lr_decay_factor;
      opt.set_lr(lr);
    }
    // Sample frame pairs, then visit them in shuffled order.
    std::vector<std::pair<const Tensor*, const Tensor*>> pairs;
    for (const auto& clip : clips) {
      for (int p = 0; p < cfg.pairs_per_clip; ++p) {
        auto [a, b] = data::sample_frame_pair(clip, rng);
        pairs.emplace_back(&a, &b);
      }
    }
    for (size_t i = pairs.size(); i > 1; --i)
      std::swap(pairs[i - 1], pairs[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

    double epoch_loss = 0.0;
    int num_batches = 0;
    for (size_t start = 0; start < pairs.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(pairs.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<const Tensor*> refs, dris;
      for (size_t i = start; i < end; ++i) {
        refs.push_back(pairs[i].first);
        dris.push_back(pairs[i].second);
      }
      Tensor ref_batch = stack_frames(refs);
      Tensor dri_batch = stack_frames(dris);
      color_jitter_pair(ref_batch, dri_batch, rng);
      Var x_ref(std::move(ref_batch));
      Var x_dri(std::move(dri_batch));
      Var out = model.reconstruct(x_ref, x_dri);
      Var loss = reconstruction_loss(out, x_dri);
      const float lv = loss.val()[0];
      check(std::isfinite(lv), "non-finite training loss at epoch " +
                                   std::to_string(epoch) + " batch " +
                                   std::to_string(num_batches));
      model.params().zero_grad();
      backward(loss);
      opt.step();
      epoch_loss += lv;
      ++num_batches;
    }
    const float mean_loss = static_cast<float>(epoch_loss / std::max(1, num_batches));
    result.epoch_losses.push_back(mean_loss);
    std::cout << "{\"event\":\"stage1_epoch\",\"epoch\":" << epoch
              << ",\"loss\":" << mean_loss << ",\"lr\":" << lr << "}\n";
  }

  model.save(out_path);
  save_lfae_metadata(out_path, cfg, cfg.epochs, init_seed, config_hash);
  result.checkpoint_path = out_path;
  return result;
}

float self_reconstruction_l1(const LFAE& model,
                             const data::DatasetManifest& manifest,
                             const std::vector<data::ClipRecord>& records,
                             int max_frames_per_clip) {
  check(!records.empty(), "empty evaluation split");
  double total = 0.0;
  int64_t count = 0;
  for (const auto& rec : records) {
    const data::VideoClip clip = data::load_clip(manifest, rec);
    const int n = static_cast<int>(clip.frames.size());
    const int step = std::max(1, n / max_frames_per_clip);
    for (int i = 0; i < n; i += step) {
      Var x(clip.frames[static_cast<size_t>(i)].reshaped(
          {1, clip.frames[static_cast<size_t>(i)].dim(0),
           clip.frames[static_cast<size_t>(i)].dim(1),
           clip.frames[static_cast<size_t>(i)].dim(2)}));
      Var out = model.reconstruct(x, x);
      double acc = 0.0;
      for (int64_t k = 0; k < out.numel(); ++k)
        acc += std::abs(out.val()[k] - x.val()[k]);
      total += acc / static_cast<double>(out.numel());
      ++count;
    }
  }
  return static_cast<float>(total / static_cast<double>(count));
}

}  // namespace lfdm::lfae

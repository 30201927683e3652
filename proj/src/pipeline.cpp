#include "lfdm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iostream>

#include "lfdm/image.hpp"
#include "lfdm/ops.hpp"

namespace lfdm::pipeline {

namespace fs = std::filesystem;

Tensor FlowNormalizer::normalize(const Tensor& s0_raw) const {
  check(s0_raw.rank() == 4 && s0_raw.dim(0) == 3,
        "flow volume must be [3,L,Hz,Wz], got " + s0_raw.shape_str());
  Tensor out = s0_raw;
  const int64_t per_channel = s0_raw.numel() / 3;
  for (int64_t i = 0; i < per_channel * 2; ++i) out[i] /= flow_constant;
  for (int64_t i = per_channel * 2; i < out.numel(); ++i)
    out[i] = out[i] * 2.0f - 1.0f;
  return out;
}

Tensor FlowNormalizer::denormalize(const Tensor& s0_norm) const {
  check(s0_norm.rank() == 4 && s0_norm.dim(0) == 3,
        "flow volume must be [3,L,Hz,Wz], got " + s0_norm.shape_str());
  Tensor out = s0_norm;
  const int64_t per_channel = s0_norm.numel() / 3;
  for (int64_t i = 0; i < per_channel * 2; ++i) out[i] *= flow_constant;
  for (int64_t i = per_channel * 2; i < out.numel(); ++i)
    out[i] = (out[i] + 1.0f) * 0.5f;
  return out;
}

FlowNormalizer FlowNormalizer::fit(const std::vector<Stage2Sample>& samples) {
  float max_abs = 0.0f;
  for (const auto& s : samples) {
    const int64_t per_channel = s.s0.numel() / 3;
    for (int64_t i = 0; i < per_channel * 2; ++i)
      max_abs = std::max(max_abs, std::fabs(s.s0[i]));
  }
  FlowNormalizer n;
  n.flow_constant = std::max(max_abs, 1.0f);
  return n;
}

Stage2Sample extract_flow_sequence(const VideoClip& clip,
                                   const EncodeHook& encode,
                                   const FlowHook& flow, bool include_f0) {
  check(!clip.frames.empty(), "empty clip");
  const Tensor& x0 = clip.frames.front();
  Stage2Sample out;
  out.label = clip.label;
  out.z0 = encode(x0);
  const int first = include_f0 ? 0 : 1;
  const int n = static_cast<int>(clip.frames.size());
  check(n > first, "clip too short for flow extraction");
  const int L = n - first;

  auto [f0, m0] = flow(x0, clip.frames[static_cast<size_t>(first)]);
  check(f0.rank() == 3 && f0.dim(0) == 2, "flow hook must return [2,Hz,Wz]");
  check(m0.rank() == 3 && m0.dim(0) == 1,
        "occlusion hook must return [1,Hz,Wz]");
  const int hz = f0.dim(1), wz = f0.dim(2);
  out.s0 = Tensor({3, L, hz, wz});
  const int64_t plane = static_cast<int64_t>(hz) * wz;
  const int64_t per_channel = static_cast<int64_t>(L) * plane;
  for (int i = 0; i < L; ++i) {
    std::pair<Tensor, Tensor> fm =
        i == 0 ? std::make_pair(std::move(f0), std::move(m0))
               : flow(x0, clip.frames[static_cast<size_t>(first + i)]);
    check(fm.first.dim(1) == hz && fm.first.dim(2) == wz,
          "inconsistent latent flow size within clip");
    std::memcpy(out.s0.data() + i * plane, fm.first.data(),
                sizeof(float) * static_cast<size_t>(plane));
    std::memcpy(out.s0.data() + per_channel + i * plane,
                fm.first.data() + plane,
                sizeof(float) * static_cast<size_t>(plane));
    std::memcpy(out.s0.data() + 2 * per_channel + i * plane, fm.second.data(),
                sizeof(float) * static_cast<size_t>(plane));
  }
  return out;
}

namespace {

Tensor batched(const Tensor& t) {
  std::vector<int> s = t.shape();
  s.insert(s.begin(), 1);
  return t.reshaped(s);
}

Tensor unbatched(const Tensor& t) {
  std::vector<int> s(t.shape().begin() + 1, t.shape().end());
  return t.reshaped(s);
}

EncodeHook model_encode_hook(const lfae::LFAE& model) {
  return [&model](const Tensor& x) {
    return unbatched(model.encode(Var(batched(x))).val());
  };
}

FlowHook model_flow_hook(const lfae::LFAE& model) {
  return [&model](const Tensor& ref, const Tensor& dri) {
    auto [f, m] = model.predict_flow(Var(batched(ref)), Var(batched(dri)));
    return std::make_pair(unbatched(f.val()), unbatched(m.val()));
  };
}

}  // namespace

Stage2Sample extract_flow_sequence(const VideoClip& clip,
                                   const lfae::LFAE& model, bool include_f0) {
  return extract_flow_sequence(clip, model_encode_hook(model),
                               model_flow_hook(model), include_f0);
}

Stage2Result train_stage2(const data::DatasetManifest& manifest,
                          const std::string& stage1_ckpt,
                          const Stage2Config& cfg, Rng& rng,
                          const std::string& out_path, uint64_t config_hash) {
  cfg.validate();
  check(!manifest.train.empty(), "train split is empty");
  check(fs::exists(stage1_ckpt),
        "missing stage-one checkpoint: " + stage1_ckpt);

  lfae::LFAEConfig s1cfg = lfae::load_lfae_config(stage1_ckpt);
  lfae::LFAE stage1(s1cfg, 0);
  stage1.load(stage1_ckpt);
  stage1.params().set_trainable(false);
  const uint64_t s1_hash = stage1.params().content_hash();

  // Extract flow volumes once with the frozen stage-one model; the toy
  // corpus fits in memory. Clips longer than the trained volume are
  // subsampled per epoch below.
  const int k = cfg.volume_len - (cfg.include_f0 ? 1 : 0);
  std::vector<Stage2Sample> samples;
  for (const auto& rec : manifest.train) {
    data::VideoClip clip = data::load_clip(manifest, rec);
    if (static_cast<int>(clip.frames.size()) != k + 1) {
      clip = data::sample_training_clip(clip, k, rng);
    }
    samples.push_back(extract_flow_sequence(clip, stage1, cfg.include_f0));
    check(samples.back().s0.dim(1) == cfg.volume_len,
          "extracted volume length mismatch");
  }
  FlowNormalizer norm = FlowNormalizer::fit(samples);
  for (auto& s : samples) s.s0 = norm.normalize(s.s0);
  check(stage1.params().content_hash() == s1_hash,
        "stage-one weights changed during extraction");

  diffusion::NoiseSchedule sched = diffusion::make_cosine_schedule(cfg.schedule_T);
  const uint64_t init_seed = rng.next_u64();
  diffusion::Denoiser3D model(cfg.denoiser, init_seed);
  Adam opt(model.params().params(), cfg.lr);

  Stage2Result result;
  result.normalizer = norm;
  float lr = cfg.lr;
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (std::find(cfg.lr_decay_epochs.begin(), cfg.lr_decay_epochs.end(),
                  epoch) != cfg.lr_decay_epochs.end()) {
      lr *= cfg.lr_decay_factor;
      opt.set_lr(lr);
    }
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    double epoch_loss = 0.0;
    int num_steps = 0;
    // Gradient accumulation over batch_size single-volume graphs.
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (size_t i = start; i < end; ++i) {
        const Stage2Sample& s = samples[order[i]];
        Var loss = diffusion::dm_training_loss(model, s.s0, s.z0, s.label,
                                               sched, rng, cfg.p_null);
        const float lv = loss.val()[0];
        check(std::isfinite(lv), "non-finite stage-two loss at epoch " +
                                     std::to_string(epoch));
        backward(loss);
        batch_loss += lv;
      }
      const float inv = 1.0f / static_cast<float>(end - start);
      for (auto& p : model.params().params()) {
        if (p.node()->grad.empty()) continue;
        Tensor& g = p.node()->grad;
        for (int64_t j = 0; j < g.numel(); ++j) g[j] *= inv;
      }
      opt.step();
      epoch_loss += batch_loss / static_cast<double>(end - start);
      ++num_steps;
    }
    const float mean_loss =
        static_cast<float>(epoch_loss / std::max(1, num_steps));
    result.epoch_losses.push_back(mean_loss);
    std::cout << "{\"event\":\"stage2_epoch\",\"epoch\":" << epoch
              << ",\"loss\":" << mean_loss << ",\"lr\":" << lr << "}\n";
  }
  check(stage1.params().content_hash() == s1_hash,
        "stage-one weights changed during stage-two training");

  model.save(out_path);
  diffusion::Stage2Meta meta;
  meta.flow_norm_constant = norm.flow_constant;
  meta.volume_len = cfg.volume_len;
  meta.schedule_T = cfg.schedule_T;
  meta.latent_size = samples.front().z0.dim(1);
  diffusion::save_denoiser_metadata(out_path, cfg.denoiser, cfg.epochs,
                                    init_seed, config_hash, meta);
  result.checkpoint_path = out_path;
  return result;
}

Tensor sample_flow_volume(const diffusion::Denoiser3D& model,
                          const diffusion::NoiseSchedule& sched,
                          const Tensor& z0, int volume_len,
                          const GenerationRequest& req) {
  check(z0.rank() == 3, "z0 must be [C_z,Hz,Wz]");
  diffusion::CondEpsilonFn cond = [&](const Tensor& s_t, int t, int label) {
    return model.eps(s_t, t, z0, label);
  };
  diffusion::EpsilonFn eps = [&](const Tensor& s_t, int t) {
    return diffusion::guided_epsilon(cond, s_t, t, req.label, req.g);
  };
  Rng rng(Rng::mix(req.seed, 0x73616d706cULL));
  const std::vector<int> shape = {3, volume_len, z0.dim(1), z0.dim(2)};
  if (req.sampler == SamplerKind::kDDPM) {
    return diffusion::ddpm_sample(eps, shape, sched, rng);
  }
  return diffusion::ddim_sample(eps, shape, sched, req.steps, rng);
}

std::vector<Tensor> decode_flow_volume(const lfae::LFAE& model,
                                       const Tensor& z0,
                                       const Tensor& s0_raw) {
  check(s0_raw.rank() == 4 && s0_raw.dim(0) == 3, "bad flow volume shape");
  const int L = s0_raw.dim(1);
  const int hz = s0_raw.dim(2), wz = s0_raw.dim(3);
  check(z0.rank() == 3 && z0.dim(1) == hz && z0.dim(2) == wz,
        "latent geometry mismatch between z0 " + z0.shape_str() +
            " and flow volume " + s0_raw.shape_str());
  const int64_t plane = static_cast<int64_t>(hz) * wz;
  const int64_t per_channel = static_cast<int64_t>(L) * plane;
  Var z(batched(z0));
  std::vector<Tensor> frames;
  for (int i = 0; i < L; ++i) {
    Tensor f({1, 2, hz, wz});
    Tensor m({1, 1, hz, wz});
    std::memcpy(f.data(), s0_raw.data() + i * plane,
                sizeof(float) * static_cast<size_t>(plane));
    std::memcpy(f.data() + plane, s0_raw.data() + per_channel + i * plane,
                sizeof(float) * static_cast<size_t>(plane));
    for (int64_t j = 0; j < plane; ++j) {
      const float v = s0_raw[2 * per_channel + i * plane + j];
      m[j] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
    Var warped = ops::warp_bilinear(z, Var(std::move(f)), Var(std::move(m)));
    frames.push_back(unbatched(model.decode(warped).val()));
  }
  return frames;
}

VideoClip generate_video(const GenerationRequest& req,
                         const std::string& stage1_ckpt,
                         const std::string& stage2_ckpt) {
  check(fs::exists(stage1_ckpt),
        "missing stage-one checkpoint: " + stage1_ckpt);
  check(fs::exists(stage2_ckpt),
        "missing stage-two checkpoint: " + stage2_ckpt);
  lfae::LFAEConfig s1cfg = lfae::load_lfae_config(stage1_ckpt);
  lfae::LFAE stage1(s1cfg, 0);
  stage1.load(stage1_ckpt);
  diffusion::DenoiserConfig dncfg = diffusion::load_denoiser_config(stage2_ckpt);
  check(dncfg.c_z == s1cfg.c_z,
        "checkpoint mismatch: stage-one latent channels " +
            std::to_string(s1cfg.c_z) + " vs stage-two " +
            std::to_string(dncfg.c_z));
  diffusion::Denoiser3D model(dncfg, 0);
  model.load(stage2_ckpt);
  diffusion::Stage2Meta meta = diffusion::load_denoiser_meta(stage2_ckpt);

  check(req.x0.rank() == 3 && req.x0.dim(0) == 3, "x0 must be [3,H,W]");
  Tensor z0 = unbatched(stage1.encode(Var(batched(req.x0))).val());
  check(z0.dim(1) == meta.latent_size && z0.dim(2) == meta.latent_size,
        "checkpoint mismatch: stage-two trained at latent size " +
            std::to_string(meta.latent_size) + ", stage-one produced " +
            z0.shape_str());

  diffusion::NoiseSchedule sched =
      diffusion::make_cosine_schedule(meta.schedule_T);
  Tensor s_norm = sample_flow_volume(model, sched, z0, meta.volume_len, req);
  FlowNormalizer norm{meta.flow_norm_constant};
  Tensor s_raw = norm.denormalize(s_norm);

  VideoClip clip;
  clip.label = req.label;
  clip.frames = decode_flow_volume(stage1, z0, s_raw);
  return clip;
}

void write_video_frames(const VideoClip& clip, const std::string& dir,
                        bool contact_sheet) {
  fs::create_directories(dir);
  char name[32];
  for (size_t i = 0; i < clip.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
    write_png_rgb(dir + "/" + name, clip.frames[i]);
  }
  if (contact_sheet && !clip.frames.empty()) {
    const int h = clip.frames[0].dim(1), w = clip.frames[0].dim(2);
    const int n = static_cast<int>(clip.frames.size());
    Tensor sheet({3, h, w * n});
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            sheet[(static_cast<int64_t>(c) * h + y) * (w * n) + i * w + x] =
                clip.frames[static_cast<size_t>(i)]
                           [(static_cast<int64_t>(c) * h + y) * w + x];
    write_png_rgb(dir + "/contact_sheet.png", sheet);
  }
}

FinetuneResult finetune_decoder(const data::DatasetManifest& new_manifest,
                                const std::string& stage1_ckpt,
                                const FinetuneConfig& cfg, Rng& rng,
                                const std::string& out_path) {
  check(!new_manifest.train.empty(), "new-domain train split is empty");
  check(fs::exists(stage1_ckpt),
        "missing stage-one checkpoint: " + stage1_ckpt);
  lfae::LFAEConfig s1cfg = lfae::load_lfae_config(stage1_ckpt);
  lfae::LFAE model(s1cfg, 0);
  model.load(stage1_ckpt);

  FinetuneResult result;
  result.enc_hash_before = model.hash_prefix("enc.");
  result.flow_hash_before = model.hash_prefix("flow.");
  const auto& val_split =
      new_manifest.test.empty() ? new_manifest.train : new_manifest.test;
  result.l1_before =
      lfae::self_reconstruction_l1(model, new_manifest, val_split);

  model.params().set_trainable(false);
  model.set_trainable_prefix("dec.", true);

  std::vector<data::VideoClip> clips;
  for (const auto& rec : new_manifest.train)
    clips.push_back(data::load_clip(new_manifest, rec));

  std::vector<Var> dec_params = model.params_with_prefix("dec.");
  Adam opt(dec_params, cfg.lr);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    int num_batches = 0;
    std::vector<std::pair<const Tensor*, const Tensor*>> pairs;
    for (const auto& clip : clips) {
      for (int p = 0; p < cfg.pairs_per_clip; ++p) {
        auto [a, b] = data::sample_frame_pair(clip, rng);
        pairs.emplace_back(&a, &b);
      }
    }
    for (size_t i = pairs.size(); i > 1; --i)
      std::swap(pairs[i - 1],
                pairs[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    for (size_t start = 0; start < pairs.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(pairs.size(), start + static_cast<size_t>(cfg.batch_size));
      const int b = static_cast<int>(end - start);
      const int h = pairs[start].first->dim(1);
      const int w = pairs[start].first->dim(2);
      Tensor refs({b, 3, h, w}), dris({b, 3, h, w});
      const int64_t sz = static_cast<int64_t>(3) * h * w;
      for (size_t i = start; i < end; ++i) {
        std::memcpy(refs.data() + static_cast<int64_t>(i - start) * sz,
                    pairs[i].first->data(), sizeof(float) * static_cast<size_t>(sz));
        std::memcpy(dris.data() + static_cast<int64_t>(i - start) * sz,
                    pairs[i].second->data(), sizeof(float) * static_cast<size_t>(sz));
      }
      Var x_dri(std::move(dris));
      Var out = model.reconstruct(Var(std::move(refs)), x_dri);
      Var loss = lfae::reconstruction_loss(out, x_dri);
      const float lv = loss.val()[0];
      check(std::isfinite(lv), "non-finite finetune loss at epoch " +
                                   std::to_string(epoch));
      model.params().zero_grad();
      backward(loss);
      opt.step();
      epoch_loss += lv;
      ++num_batches;
    }
    const float mean_loss =
        static_cast<float>(epoch_loss / std::max(1, num_batches));
    std::cout << "{\"event\":\"finetune_epoch\",\"epoch\":" << epoch
              << ",\"loss\":" << mean_loss << "}\n";
  }

  result.enc_hash_after = model.hash_prefix("enc.");
  result.flow_hash_after = model.hash_prefix("flow.");
  check(result.enc_hash_after == result.enc_hash_before,
        "encoder weights changed during decoder finetuning");
  check(result.flow_hash_after == result.flow_hash_before,
        "flow predictor weights changed during decoder finetuning");
  result.l1_after =
      lfae::self_reconstruction_l1(model, new_manifest, val_split);

  model.params().set_trainable(true);
  model.save(out_path);
  lfae::save_lfae_metadata(out_path, s1cfg, cfg.epochs, 0, 0);
  result.checkpoint_path = out_path;
  return result;
}

}  // namespace lfdm::pipeline

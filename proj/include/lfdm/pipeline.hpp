#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lfdm/dataset.hpp"
#include "lfdm/denoiser.hpp"
#include "lfdm/lfae.hpp"
#include "lfdm/sampler.hpp"

namespace lfdm::pipeline {

using data::VideoClip;

// Injectable stage-one hooks so flow extraction can be exercised without a
// trained model. encode: [3,H,W] -> [C_z,Hz,Wz]; flow: (x_ref, x_dri) ->
// (flow [2,Hz,Wz], occlusion [1,Hz,Wz]).
using EncodeHook = std::function<Tensor(const Tensor&)>;
using FlowHook =
    std::function<std::pair<Tensor, Tensor>(const Tensor&, const Tensor&)>;

struct Stage2Sample {
  Tensor s0;  // [3, L, Hz, Wz] raw (unnormalized) flow volume
  Tensor z0;  // [C_z, Hz, Wz]
  int label = 0;
};

// Maps raw flow volumes into the diffusion state space: flow channels are
// divided by a dataset-wide constant, the occlusion channel is mapped from
// [0,1] to [-1,1]. Exact round trip.
struct FlowNormalizer {
  float flow_constant = 1.0f;

  Tensor normalize(const Tensor& s0_raw) const;
  Tensor denormalize(const Tensor& s0_norm) const;
  // Largest |flow| over the raw volumes, floored at 1 so the constant is
  // well defined for static data.
  static FlowNormalizer fit(const std::vector<Stage2Sample>& samples);
};

// Per-frame flow volume for a clip: slice i comes from the pair (x_0, x_i).
// With include_f0 the i = 0 slice (pair (x_0, x_0)) is kept so the flow
// volume and the clip share length K+1; otherwise slices start at i = 1.
Stage2Sample extract_flow_sequence(const VideoClip& clip,
                                   const EncodeHook& encode,
                                   const FlowHook& flow,
                                   bool include_f0 = true);
Stage2Sample extract_flow_sequence(const VideoClip& clip,
                                   const lfae::LFAE& model,
                                   bool include_f0 = true);

struct Stage2Config {
  diffusion::DenoiserConfig denoiser;
  int schedule_T = 200;
  int volume_len = 17;  // K + 1 slices trained on
  bool include_f0 = true;
  int epochs = 1200;  // paper-scale default; desk profiles override
  int batch_size = 20;
  float lr = 2e-4f;
  std::vector<int> lr_decay_epochs = {800, 1000};
  float lr_decay_factor = 0.1f;
  float p_null = 0.1f;

  void validate() const {
    denoiser.validate();
    check(schedule_T >= 1 && volume_len >= 1 && epochs >= 1 && batch_size >= 1,
          "invalid stage-two config");
  }
};

struct Stage2Result {
  std::vector<float> epoch_losses;
  std::string checkpoint_path;
  FlowNormalizer normalizer;
};

// Trains the denoiser and condition-embedding table on flow volumes
// extracted with the frozen stage-one model. Writes <out>.ckpt + <out>.json
// including the flow-normalization constant.
Stage2Result train_stage2(const data::DatasetManifest& manifest,
                          const std::string& stage1_ckpt,
                          const Stage2Config& cfg, Rng& rng,
                          const std::string& out_path,
                          uint64_t config_hash = 0);

enum class SamplerKind { kDDPM, kDDIM };

struct GenerationRequest {
  Tensor x0;                            // [3,H,W] conditioning frame
  int label = diffusion::kNullLabel;    // kNullLabel = stochastic mode
  SamplerKind sampler = SamplerKind::kDDIM;
  int steps = 10;  // DDIM only; DDPM always runs the full schedule
  float g = 1.0f;
  uint64_t seed = 0;
};

// Samples a normalized flow volume [3, volume_len, Hz, Wz].
Tensor sample_flow_volume(const diffusion::Denoiser3D& model,
                          const diffusion::NoiseSchedule& sched,
                          const Tensor& z0, int volume_len,
                          const GenerationRequest& req);

// Decodes a raw (denormalized) flow volume: frame i = Omega(m_i * W(z0, f_i)).
// Every frame warps z0 directly; no frame depends on any other slice.
std::vector<Tensor> decode_flow_volume(const lfae::LFAE& model,
                                       const Tensor& z0,
                                       const Tensor& s0_raw);

VideoClip generate_video(const GenerationRequest& req,
                         const std::string& stage1_ckpt,
                         const std::string& stage2_ckpt);

// Frame directory in the dataset layout plus an optional contact sheet.
void write_video_frames(const VideoClip& clip, const std::string& dir,
                        bool contact_sheet = false);

struct FinetuneConfig {
  int epochs = 10;
  int batch_size = 8;
  float lr = 2e-4f;
  int pairs_per_clip = 2;
};

struct FinetuneResult {
  std::string checkpoint_path;
  float l1_before = 0.0f;
  float l1_after = 0.0f;
  uint64_t enc_hash_before = 0, enc_hash_after = 0;
  uint64_t flow_hash_before = 0, flow_hash_after = 0;
};

// Decoder-only finetuning on a new domain: encoder and flow predictor are
// frozen and verified unchanged by hash.
FinetuneResult finetune_decoder(const data::DatasetManifest& new_manifest,
                                const std::string& stage1_ckpt,
                                const FinetuneConfig& cfg, Rng& rng,
                                const std::string& out_path);

}  // namespace lfdm::pipeline

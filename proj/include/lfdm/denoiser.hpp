#pragma once

#include <string>
#include <vector>

#include "lfdm/layers.hpp"

namespace lfdm::diffusion {

// Null condition sentinel fed in place of a class label; maps to a dedicated
// learned embedding row.
constexpr int kNullLabel = -1;

struct DenoiserConfig {
  int base_channels = 64;
  std::vector<int> channel_multipliers = {1, 2, 4, 8};  // or {1,2,4,8,16}
  int c_z = 64;          // conditioning latent channels
  int emb_dim = 128;     // condition embedding width D_e
  int num_classes = 8;
  bool attention = true;  // self-attention at the lowest resolution

  void validate() const {
    check(channel_multipliers == std::vector<int>({1, 2, 4, 8}) ||
              channel_multipliers == std::vector<int>({1, 2, 4, 8, 16}),
          "channel_multipliers must be (1,2,4,8) or (1,2,4,8,16)");
    check(base_channels >= 1 && emb_dim >= 1 && num_classes >= 1,
          "invalid denoiser config");
  }
};

// Conditional 3D U-Net noise predictor over flow volumes. The latent map of
// the conditioning frame is tiled along the time axis and concatenated with
// the noisy volume channel-wise; the class embedding is summed with the
// sinusoidal timestep embedding and added inside every residual block.
class Denoiser3D {
 public:
  Denoiser3D(const DenoiserConfig& cfg, uint64_t init_seed);

  // s_t [N,3,K,H,W], z0 [N,C_z,H,W], labels[i] in {0..num_classes-1} or
  // kNullLabel. Returns predicted noise, same shape as s_t.
  Var forward(const Var& s_t, const std::vector<int>& timesteps,
              const Tensor& z0, const std::vector<int>& labels) const;

  // Inference convenience for a single unbatched volume [3,K,H,W].
  Tensor eps(const Tensor& s_t, int t, const Tensor& z0, int label) const;

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }
  Var& class_table() { return class_table_; }

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  struct ResBlock3d {
    GroupNormLayer n1, n2;
    Conv3d c1, c2;
    LinearLayer emb_proj;
    Conv3d skip;  // 1x1x1, only when channel count changes
    bool has_skip = false;
    Var fwd(const Var& x, const Var& emb) const;
  };
  struct Attention3d {
    GroupNormLayer norm;
    Conv3d q, k, v, proj;
    Var fwd(const Var& x) const;
  };

  DenoiserConfig cfg_;
  ParamStore ps_;
  Var class_table_;  // [num_classes + 1, emb_dim]; last row is the null
  LinearLayer time_mlp1_, time_mlp2_;
  Conv3d stem_;
  std::vector<ResBlock3d> down_blocks_;
  std::vector<Conv3d> down_samplers_;  // one fewer than levels
  ResBlock3d mid1_, mid2_;
  Attention3d mid_attn_;
  std::vector<ResBlock3d> up_blocks_;
  std::vector<Conv3d> up_convs_;  // post-upsample channel reducers
  GroupNormLayer out_norm_;
  Conv3d out_conv_;
  std::vector<int> level_channels_;
};

// Sidecar facts a consumer needs beyond the network weights.
struct Stage2Meta {
  float flow_norm_constant = 1.0f;
  int volume_len = 0;  // K + 1 time slices
  int schedule_T = 0;
  int latent_size = 0;  // H_z = W_z the volume was trained at
};

void save_denoiser_metadata(const std::string& ckpt_path,
                            const DenoiserConfig& cfg, int epoch,
                            uint64_t seed, uint64_t config_hash,
                            const Stage2Meta& meta);
DenoiserConfig load_denoiser_config(const std::string& ckpt_path);
Stage2Meta load_denoiser_meta(const std::string& ckpt_path);

}  // namespace lfdm::diffusion

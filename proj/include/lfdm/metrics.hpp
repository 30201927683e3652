#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lfdm/dataset.hpp"
#include "lfdm/layers.hpp"

namespace lfdm::metrics {

using data::VideoClip;

// N x D feature matrix plus an optional per-row group key (class or subject).
struct FeatureSet {
  Tensor features;  // [N, D]
  std::vector<int> groups;

  int n() const { return features.empty() ? 0 : features.dim(0); }
  int d() const { return features.empty() ? 0 : features.dim(1); }
};

// ||mu_A - mu_B||^2 + Tr(Sigma_A + Sigma_B - 2 (Sigma_A Sigma_B)^{1/2}),
// unbiased covariances, PSD square root via symmetric eigendecomposition
// with negative eigenvalues clipped to 0.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

struct OracleConfig {
  int base_channels = 16;
  int feature_dim = 64;  // penultimate video/frame feature width
  int num_classes = 8;
  int epochs = 30;
  int batch_size = 16;
  float lr = 1e-3f;

  void validate() const {
    check(base_channels >= 1 && feature_dim >= 1 && num_classes >= 2 &&
              epochs >= 1 && batch_size >= 1,
          "invalid oracle config");
  }
};

// Small spatiotemporal conv net standing in for an off-the-shelf video
// classifier. Frames pass through a 2D conv tower (with coordinate channels
// appended so pooled features retain position); per-frame embeddings are
// mixed by temporal convolutions into a video feature feeding the label head.
class OracleClassifier {
 public:
  OracleClassifier(const OracleConfig& cfg, uint64_t init_seed);

  // [L,3,H,W] frame stack -> logits [1,num_classes].
  Var logits(const VideoClip& clip) const;
  int predict(const VideoClip& clip) const;
  // Penultimate video feature, length feature_dim.
  std::vector<float> video_features(const VideoClip& clip) const;
  // Spatial sub-network feature of a single frame, length feature_dim.
  std::vector<float> frame_features(const Tensor& frame) const;

  const OracleConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  Var frame_embed(const VideoClip& clip) const;  // [L, feature_dim]
  Var video_feature_var(const VideoClip& clip) const;

  OracleConfig cfg_;
  ParamStore ps_;
  Conv2d c1_, c2_, c3_;
  LinearLayer frame_fc_;
  Conv2d t1_, t2_;  // temporal convs over [1, D, 1, L]
  LinearLayer head_;
};

struct OracleTrainResult {
  OracleConfig cfg;
  std::vector<float> epoch_losses;
  float holdout_accuracy = 0.0f;
  std::string checkpoint_path;
};

OracleTrainResult train_oracle_classifier(const data::DatasetManifest& manifest,
                                          const OracleConfig& cfg, Rng& rng,
                                          const std::string& out_path);
OracleConfig load_oracle_config(const std::string& ckpt_path);

FeatureSet video_feature_set(const OracleClassifier& oracle,
                             const std::vector<VideoClip>& clips,
                             bool group_by_subject = false);
FeatureSet frame_feature_set(const OracleClassifier& oracle,
                             const std::vector<VideoClip>& clips,
                             bool group_by_subject = false);

double fvd_like(const std::vector<VideoClip>& real,
                const std::vector<VideoClip>& fake,
                const OracleClassifier& oracle);

enum class GroupKey { kClass, kSubject };

struct GroupedFrechet {
  double mean = 0.0;
  double stddev = 0.0;
  std::map<int, double> per_group;
};

GroupedFrechet grouped_frechet(const FeatureSet& real, const FeatureSet& fake);

GroupedFrechet grouped_fvd(const std::vector<VideoClip>& real,
                           const std::vector<VideoClip>& fake,
                           const OracleClassifier& oracle, GroupKey key);

double fid_like(const std::vector<VideoClip>& real,
                const std::vector<VideoClip>& fake,
                const OracleClassifier& oracle);
GroupedFrechet grouped_fid(const std::vector<VideoClip>& real,
                           const std::vector<VideoClip>& fake,
                           const OracleClassifier& oracle);

// Fraction of clips whose oracle-predicted class equals requested_labels[i].
double condition_accuracy(const std::vector<VideoClip>& generated,
                          const std::vector<int>& requested_labels,
                          const OracleClassifier& oracle);

// Mean L1 between frames and their reconstructions under an arbitrary
// single-frame reconstruction map; the trained-model case plugs in the
// stage-one self-reconstruction.
double l1_reconstruction_error(
    const std::function<Tensor(const Tensor&)>& reconstruct,
    const std::vector<Tensor>& frames);

}  // namespace lfdm::metrics

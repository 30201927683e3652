#include "lfdm/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"

namespace lfdm::metrics {

using json = nlohmann::json;

namespace {

// Mean vector and unbiased covariance of the rows.
void row_stats(const FeatureSet& s, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const int n = s.n(), d = s.d();
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      x(i, j) = s.features[static_cast<int64_t>(i) * d + j];
  mu = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  cov = centered.transpose() * centered / denom;
}

// PSD square root with negative eigenvalues clipped to zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
      0.5 * (a + a.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) ev[i] = ev[i] > 0.0 ? std::sqrt(ev[i]) : 0.0;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
  check(a.n() > 0 && b.n() > 0, "frechet_distance: empty feature set");
  check(a.d() == b.d(), "frechet_distance: dimension mismatch " +
                            std::to_string(a.d()) + " vs " +
                            std::to_string(b.d()));
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  row_stats(a, mu_a, cov_a);
  row_stats(b, mu_b, cov_b);
  const Eigen::MatrixXd sa_half = psd_sqrt(cov_a);
  const Eigen::MatrixXd cross = psd_sqrt(sa_half * cov_b * sa_half);
  const double dist = (mu_a - mu_b).squaredNorm() + cov_a.trace() +
                      cov_b.trace() - 2.0 * cross.trace();
  return dist > 0.0 ? dist : 0.0;
}

OracleClassifier::OracleClassifier(const OracleConfig& cfg, uint64_t init_seed)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng(init_seed);
  const int b = cfg_.base_channels, d = cfg_.feature_dim;
  // +2 input channels for the normalized coordinate grid.
  c1_ = Conv2d::create(ps_, "spatial.c1", 5, b, 3, 2, 1, rng);
  c2_ = Conv2d::create(ps_, "spatial.c2", b, 2 * b, 3, 2, 1, rng);
  c3_ = Conv2d::create(ps_, "spatial.c3", 2 * b, 2 * b, 3, 2, 1, rng);
  frame_fc_ = LinearLayer::create(ps_, "spatial.fc", 2 * b, d, rng);
  t1_ = Conv2d::create(ps_, "temporal.c1", d, d, 3, 1, 1, rng);
  t2_ = Conv2d::create(ps_, "temporal.c2", d, d, 3, 1, 1, rng);
  head_ = LinearLayer::create(ps_, "head", d, cfg_.num_classes, rng);
}

Var OracleClassifier::frame_embed(const VideoClip& clip) const {
  check(!clip.frames.empty(), "oracle: empty clip");
  const int l = static_cast<int>(clip.frames.size());
  const int h = clip.frames[0].dim(1), w = clip.frames[0].dim(2);
  Tensor x({l, 5, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int i = 0; i < l; ++i) {
    const Tensor& f = clip.frames[static_cast<size_t>(i)];
    check(f.dim(1) == h && f.dim(2) == w, "oracle: inconsistent frame sizes");
    float* dst = x.data() + static_cast<int64_t>(i) * 5 * plane;
    // Standardize each channel over the frame so the classifier sees
    // contrast structure rather than the subject's palette.
    for (int c = 0; c < 3; ++c) {
      const float* src = f.data() + static_cast<int64_t>(c) * plane;
      double mean = 0.0;
      for (int64_t p = 0; p < plane; ++p) mean += src[p];
      mean /= static_cast<double>(plane);
      double var = 0.0;
      for (int64_t p = 0; p < plane; ++p) {
        const double d = src[p] - mean;
        var += d * d;
      }
      var /= static_cast<double>(plane);
      const float istd = 1.0f / std::sqrt(static_cast<float>(var) + 1e-6f);
      float* out = dst + static_cast<int64_t>(c) * plane;
      // Absolute deviation: invariant to palette brightness ordering, so a
      // dark sprite on a light background reads like its inverse.
      for (int64_t p = 0; p < plane; ++p)
        out[p] = std::fabs(src[p] - static_cast<float>(mean)) * istd;
    }
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        dst[3 * plane + y * w + xx] =
            w > 1 ? 2.0f * xx / static_cast<float>(w - 1) - 1.0f : 0.0f;
        dst[4 * plane + y * w + xx] =
            h > 1 ? 2.0f * y / static_cast<float>(h - 1) - 1.0f : 0.0f;
      }
  }
  Var v = ops::relu(c1_.fwd(Var(std::move(x))));
  v = ops::relu(c2_.fwd(v));
  v = ops::relu(c3_.fwd(v));
  v = ops::global_avg_pool(v);     // [L, 2b]
  return frame_fc_.fwd(v);         // [L, D]
}

Var OracleClassifier::video_feature_var(const VideoClip& clip) const {
  Var fe = frame_embed(clip);  // [L, D]
  // Motion is what separates the classes, so feed the temporal stack the
  // differences of consecutive frame embeddings: static content (palette,
  // background) cancels and the feature becomes subject-invariant to first
  // order. The gain rescales the small embedding deltas to O(1).
  if (fe.dim(0) >= 2) {
    const int l = fe.dim(0);
    constexpr float kDiffGain = 8.0f;
    Tensor dm({l - 1, l}, 0.0f);
    for (int i = 0; i < l - 1; ++i) {
      dm[static_cast<int64_t>(i) * l + i] = -kDiffGain;
      dm[static_cast<int64_t>(i) * l + i + 1] = kDiffGain;
    }
    fe = ops::matmul(Var(std::move(dm)), fe);  // [L-1, D]
  }
  const int l = fe.dim(0), d = fe.dim(1);
  // [L, D] -> [1, D, 1, L] so the temporal axis is convolved spatially.
  Var seq = ops::reshape(ops::transpose_last2(ops::reshape(fe, {1, l, d})),
                         {1, d, 1, l});
  seq = ops::relu(t1_.fwd(seq));
  seq = ops::relu(t2_.fwd(seq));
  return ops::global_avg_pool(seq);  // [1, D]
}

Var OracleClassifier::logits(const VideoClip& clip) const {
  return head_.fwd(video_feature_var(clip));
}

int OracleClassifier::predict(const VideoClip& clip) const {
  const Tensor lg = logits(clip).val();
  int best = 0;
  for (int c = 1; c < cfg_.num_classes; ++c)
    if (lg[c] > lg[best]) best = c;
  return best;
}

std::vector<float> OracleClassifier::video_features(const VideoClip& clip) const {
  const Tensor f = video_feature_var(clip).val();
  return {f.data(), f.data() + f.numel()};
}

std::vector<float> OracleClassifier::frame_features(const Tensor& frame) const {
  VideoClip one;
  one.frames.push_back(frame);
  const Tensor f = frame_embed(one).val();
  return {f.data(), f.data() + f.numel()};
}

void OracleClassifier::save(const std::string& path) const {
  save_tensors(path, ps_.names(), ps_.params());
}

void OracleClassifier::load(const std::string& path) {
  load_tensors(path, ps_.names(), ps_.params());
}

namespace {

json oracle_config_to_json(const OracleConfig& c) {
  return json{{"base_channels", c.base_channels},
              {"feature_dim", c.feature_dim},
              {"num_classes", c.num_classes},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr}};
}

}  // namespace

OracleTrainResult train_oracle_classifier(const data::DatasetManifest& manifest,
                                          const OracleConfig& cfg, Rng& rng,
                                          const std::string& out_path) {
  cfg.validate();
  check(manifest.train.size() >= 2, "too few clips to train an oracle");
  std::vector<VideoClip> train_clips, test_clips;
  for (const auto& rec : manifest.train)
    train_clips.push_back(data::load_clip(manifest, rec));
  for (const auto& rec : manifest.test)
    test_clips.push_back(data::load_clip(manifest, rec));

  OracleClassifier model(cfg, rng.next_u64());
  Adam opt(model.params().params(), cfg.lr);

  OracleTrainResult result;
  result.cfg = cfg;
  std::vector<size_t> order(train_clips.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    double epoch_loss = 0.0;
    int num_steps = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (size_t i = start; i < end; ++i) {
        const VideoClip& clip = train_clips[order[i]];
        Var loss = ops::cross_entropy_logits(model.logits(clip), {clip.label});
        const float lv = loss.val()[0];
        check(std::isfinite(lv), "non-finite oracle loss");
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
    std::cout << "{\"event\":\"oracle_epoch\",\"epoch\":" << epoch
              << ",\"loss\":" << mean_loss << "}\n";
  }

  const auto& holdout = test_clips.empty() ? train_clips : test_clips;
  int correct = 0;
  for (const auto& clip : holdout)
    if (model.predict(clip) == clip.label) ++correct;
  result.holdout_accuracy =
      static_cast<float>(correct) / static_cast<float>(holdout.size());

  model.save(out_path);
  json j;
  j["stage"] = "oracle";
  j["format_version"] = 1;
  j["holdout_accuracy"] = result.holdout_accuracy;
  j["config"] = oracle_config_to_json(cfg);
  std::ofstream f(out_path + ".json");
  check(f.good(), "cannot write oracle metadata: " + out_path + ".json");
  f << j.dump(2) << "\n";
  result.checkpoint_path = out_path;
  return result;
}

OracleConfig load_oracle_config(const std::string& ckpt_path) {
  std::ifstream f(ckpt_path + ".json");
  check(f.good(), "missing oracle metadata: " + ckpt_path + ".json");
  json j;
  f >> j;
  check(j.at("stage") == "oracle", "not an oracle checkpoint: " + ckpt_path);
  const json& c = j.at("config");
  OracleConfig cfg;
  cfg.base_channels = c.at("base_channels").get<int>();
  cfg.feature_dim = c.at("feature_dim").get<int>();
  cfg.num_classes = c.at("num_classes").get<int>();
  cfg.epochs = c.at("epochs").get<int>();
  cfg.batch_size = c.at("batch_size").get<int>();
  cfg.lr = c.at("lr").get<float>();
  return cfg;
}

FeatureSet video_feature_set(const OracleClassifier& oracle,
                             const std::vector<VideoClip>& clips,
                             bool group_by_subject) {
  check(!clips.empty(), "video_feature_set: no clips");
  const int d = oracle.config().feature_dim;
  FeatureSet out;
  out.features = Tensor({static_cast<int>(clips.size()), d});
  for (size_t i = 0; i < clips.size(); ++i) {
    const auto f = oracle.video_features(clips[i]);
    std::memcpy(out.features.data() + static_cast<int64_t>(i) * d, f.data(),
                sizeof(float) * static_cast<size_t>(d));
    out.groups.push_back(group_by_subject ? clips[i].subject_id
                                          : clips[i].label);
  }
  return out;
}

FeatureSet frame_feature_set(const OracleClassifier& oracle,
                             const std::vector<VideoClip>& clips,
                             bool group_by_subject) {
  check(!clips.empty(), "frame_feature_set: no clips");
  const int d = oracle.config().feature_dim;
  int total = 0;
  for (const auto& c : clips) total += static_cast<int>(c.frames.size());
  FeatureSet out;
  out.features = Tensor({total, d});
  int row = 0;
  for (const auto& clip : clips) {
    for (const auto& frame : clip.frames) {
      const auto f = oracle.frame_features(frame);
      std::memcpy(out.features.data() + static_cast<int64_t>(row) * d,
                  f.data(), sizeof(float) * static_cast<size_t>(d));
      out.groups.push_back(group_by_subject ? clip.subject_id : clip.label);
      ++row;
    }
  }
  return out;
}

double fvd_like(const std::vector<VideoClip>& real,
                const std::vector<VideoClip>& fake,
                const OracleClassifier& oracle) {
  return frechet_distance(video_feature_set(oracle, real),
                          video_feature_set(oracle, fake));
}

namespace {

FeatureSet rows_of_group(const FeatureSet& s, int g) {
  const int d = s.d();
  std::vector<int> idx;
  for (size_t i = 0; i < s.groups.size(); ++i)
    if (s.groups[i] == g) idx.push_back(static_cast<int>(i));
  FeatureSet out;
  out.features = Tensor({static_cast<int>(idx.size()), d});
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.features.data() + static_cast<int64_t>(i) * d,
                s.features.data() + static_cast<int64_t>(idx[i]) * d,
                sizeof(float) * static_cast<size_t>(d));
  return out;
}

}  // namespace

GroupedFrechet grouped_frechet(const FeatureSet& real, const FeatureSet& fake) {
  std::set<int> rg(real.groups.begin(), real.groups.end());
  std::set<int> fg(fake.groups.begin(), fake.groups.end());
  check(rg == fg, "grouped Frechet: group keys differ between the two sets");
  check(!rg.empty(), "grouped Frechet: no groups");
  GroupedFrechet out;
  for (int g : rg) {
    out.per_group[g] =
        frechet_distance(rows_of_group(real, g), rows_of_group(fake, g));
  }
  double sum = 0.0;
  for (const auto& [g, v] : out.per_group) sum += v;
  out.mean = sum / static_cast<double>(out.per_group.size());
  double var = 0.0;
  for (const auto& [g, v] : out.per_group)
    var += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(var / static_cast<double>(out.per_group.size()));
  return out;
}

GroupedFrechet grouped_fvd(const std::vector<VideoClip>& real,
                           const std::vector<VideoClip>& fake,
                           const OracleClassifier& oracle, GroupKey key) {
  const bool by_subject = key == GroupKey::kSubject;
  return grouped_frechet(video_feature_set(oracle, real, by_subject),
                         video_feature_set(oracle, fake, by_subject));
}

double fid_like(const std::vector<VideoClip>& real,
                const std::vector<VideoClip>& fake,
                const OracleClassifier& oracle) {
  return frechet_distance(frame_feature_set(oracle, real),
                          frame_feature_set(oracle, fake));
}

GroupedFrechet grouped_fid(const std::vector<VideoClip>& real,
                           const std::vector<VideoClip>& fake,
                           const OracleClassifier& oracle) {
  return grouped_frechet(frame_feature_set(oracle, real, true),
                         frame_feature_set(oracle, fake, true));
}

double condition_accuracy(const std::vector<VideoClip>& generated,
                          const std::vector<int>& requested_labels,
                          const OracleClassifier& oracle) {
  check(!generated.empty(), "condition_accuracy: no generated clips");
  check(generated.size() == requested_labels.size(),
        "condition_accuracy: label count mismatch");
  int correct = 0;
  for (size_t i = 0; i < generated.size(); ++i)
    if (oracle.predict(generated[i]) == requested_labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(generated.size());
}

double l1_reconstruction_error(
    const std::function<Tensor(const Tensor&)>& reconstruct,
    const std::vector<Tensor>& frames) {
  check(!frames.empty(), "l1_reconstruction_error: no frames");
  double total = 0.0;
  for (const auto& x : frames) {
    Tensor y = reconstruct(x);
    check(y.same_shape(x), "reconstruction changed frame shape");
    double acc = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += std::fabs(y[i] - x[i]);
    total += acc / static_cast<double>(x.numel());
  }
  return total / static_cast<double>(frames.size());
}

}  // namespace lfdm::metrics

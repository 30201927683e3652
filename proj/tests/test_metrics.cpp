#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "lfdm/metrics.hpp"
#include "test_util.hpp"

using namespace lfdm;
using namespace lfdm::metrics;
using test::max_abs_diff;
using test::random_tensor;

namespace {

FeatureSet make_set(const std::vector<std::vector<float>>& rows,
                    std::vector<int> groups = {}) {
  FeatureSet s;
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows[0].size());
  s.features = Tensor({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      s.features[static_cast<int64_t>(i) * d + j] = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  s.groups = std::move(groups);
  return s;
}

FeatureSet gaussian_set(int n, int d, Rng& rng, float mean = 0.0f,
                        float scale = 1.0f) {
  FeatureSet s;
  s.features = Tensor({n, d});
  for (int64_t i = 0; i < s.features.numel(); ++i)
    s.features[i] = mean + scale * rng.normal();
  return s;
}

OracleConfig tiny_oracle_config() {
  OracleConfig cfg;
  cfg.base_channels = 8;
  cfg.feature_dim = 16;
  cfg.num_classes = 2;
  return cfg;
}

VideoClip random_clip(Rng& rng, int frames = 3, int size = 16, int label = 0,
                      int subject = 0) {
  VideoClip clip;
  clip.label = label;
  clip.subject_id = subject;
  for (int i = 0; i < frames; ++i)
    clip.frames.push_back(random_tensor({3, size, size}, rng, 0.5f));
  return clip;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("identical feature sets have (near) zero distance") {
  Rng rng(141);
  FeatureSet a = gaussian_set(40, 6, rng);
  CHECK(frechet_distance(a, a) < 1e-8);
}

TEST_CASE("one-dimensional closed form") {
  // d = (mu_a - mu_b)^2 + sa^2 + sb^2 - 2*sa*sb with unbiased variances.
  // {0,2} vs {1,3}: means 1,2, variances 2,2 -> d = 1.
  FeatureSet a = make_set({{0.0f}, {2.0f}});
  FeatureSet b = make_set({{1.0f}, {3.0f}});
  CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-9));
  // {0,0} vs {4,6}: means 0,5, variances 0,2 -> 25 + 0 + 2 - 0 = 27.
  FeatureSet c = make_set({{0.0f}, {0.0f}});
  FeatureSet d = make_set({{4.0f}, {6.0f}});
  CHECK(frechet_distance(c, d) == doctest::Approx(27.0).epsilon(1e-9));
}

TEST_CASE("diagonal covariances reduce to a per-dimension sum") {
  // Independent dimensions: distance = sum_i (dmu_i^2 + (s_ai - s_bi)^2)
  // when covariances are exactly diagonal. Build sets with exactly known
  // diagonal sample covariance by using +/- pairs around the mean.
  const std::vector<float> mu_a{1.0f, -2.0f, 0.5f};
  const std::vector<float> mu_b{0.0f, 1.0f, 2.0f};
  const std::vector<float> s_a{1.0f, 2.0f, 0.5f};
  const std::vector<float> s_b{2.0f, 1.0f, 1.5f};
  // Rows mu +/- s*e_i: sample covariance = diag(s_i^2 * 2 / (n-1)).
  auto build = [](const std::vector<float>& mu, const std::vector<float>& s) {
    std::vector<std::vector<float>> rows;
    for (int i = 0; i < 3; ++i) {
      std::vector<float> up = mu, dn = mu;
      up[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
      dn[static_cast<size_t>(i)] -= s[static_cast<size_t>(i)];
      rows.push_back(up);
      rows.push_back(dn);
    }
    return make_set(rows);
  };
  FeatureSet a = build(mu_a, s_a);
  FeatureSet b = build(mu_b, s_b);
  const double scale = 2.0 / 5.0;  // unbiased: 2 s_i^2 / (n - 1), n = 6
  double want = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double va = s_a[static_cast<size_t>(i)] * s_a[static_cast<size_t>(i)] * scale;
    const double vb = s_b[static_cast<size_t>(i)] * s_b[static_cast<size_t>(i)] * scale;
    const double dmu = mu_a[static_cast<size_t>(i)] - mu_b[static_cast<size_t>(i)];
    want += dmu * dmu + va + vb - 2.0 * std::sqrt(va * vb);
  }
  CHECK(frechet_distance(a, b) == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("distance is symmetric and rotation invariant") {
  Rng rng(142);
  FeatureSet a = gaussian_set(60, 4, rng, 0.0f, 1.0f);
  FeatureSet b = gaussian_set(50, 4, rng, 0.7f, 1.3f);
  const double ab = frechet_distance(a, b);
  const double ba = frechet_distance(b, a);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
  CHECK(ab > 0.0);

  // Apply the same orthogonal rotation (Givens in dims 1,3) to both sets.
  const float c = std::cos(0.6f), s = std::sin(0.6f);
  auto rotate = [&](FeatureSet f) {
    for (int i = 0; i < f.n(); ++i) {
      float& x = f.features[static_cast<int64_t>(i) * 4 + 1];
      float& y = f.features[static_cast<int64_t>(i) * 4 + 3];
      const float nx = c * x - s * y;
      const float ny = s * x + c * y;
      x = nx;
      y = ny;
    }
    return f;
  };
  CHECK(frechet_distance(rotate(a), rotate(b)) ==
        doctest::Approx(ab).epsilon(1e-4));
}

TEST_CASE("degenerate inputs") {
  // A single row carries zero covariance: the distance degenerates to the
  // squared mean gap plus the other set's trace.
  FeatureSet a = make_set({{0.0f}});
  FeatureSet b = make_set({{1.0f}, {3.0f}});  // mean 2, variance 2
  CHECK(frechet_distance(a, b) == doctest::Approx(4.0 + 2.0).epsilon(1e-9));
  // Dimension mismatch and empty sets are errors.
  FeatureSet c = make_set({{1.0f, 2.0f}, {0.0f, 0.0f}});
  CHECK_THROWS_AS((void)frechet_distance(b, c), std::runtime_error);
  FeatureSet empty;
  CHECK_THROWS_AS((void)frechet_distance(empty, b), std::runtime_error);
}

TEST_CASE("grouped distance reports per-group values, mean and spread") {
  // Group 0: {0,2} vs {1,3} -> 1. Group 1: {0,0} vs {4,6} -> 27.
  FeatureSet real = make_set({{0.0f}, {2.0f}, {0.0f}, {0.0f}}, {0, 0, 1, 1});
  FeatureSet fake = make_set({{1.0f}, {3.0f}, {4.0f}, {6.0f}}, {0, 0, 1, 1});
  GroupedFrechet g = grouped_frechet(real, fake);
  REQUIRE(g.per_group.size() == 2u);
  CHECK(g.per_group.at(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(g.per_group.at(1) == doctest::Approx(27.0).epsilon(1e-9));
  CHECK(g.mean == doctest::Approx(14.0).epsilon(1e-9));
  CHECK(g.stddev == doctest::Approx(13.0).epsilon(1e-9));  // population std

  // A single group has zero spread.
  FeatureSet r1 = make_set({{0.0f}, {2.0f}}, {5, 5});
  FeatureSet f1 = make_set({{1.0f}, {3.0f}}, {5, 5});
  GroupedFrechet g1 = grouped_frechet(r1, f1);
  CHECK(g1.mean == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(g1.stddev == doctest::Approx(0.0));

  // Group keys must agree between the two sets, in either direction.
  FeatureSet odd = make_set({{1.0f}, {3.0f}}, {9, 9});
  CHECK_THROWS_AS((void)grouped_frechet(real, odd), std::runtime_error);
  CHECK_THROWS_AS((void)grouped_frechet(odd, real), std::runtime_error);
}

TEST_CASE("oracle features discriminate shuffled frame order") {
  OracleClassifier oracle(tiny_oracle_config(), 143);
  Rng rng(144);
  // Real clips: smooth drift (consecutive frames close). Fake: same frames
  // shuffled, which temporal convolutions should register.
  std::vector<VideoClip> real, same, shuffled;
  for (int i = 0; i < 6; ++i) {
    VideoClip clip;
    clip.label = 0;
    Tensor base = random_tensor({3, 16, 16}, rng, 0.5f);
    for (int f = 0; f < 4; ++f) {
      Tensor fr = base;
      for (int64_t k = 0; k < fr.numel(); ++k)
        fr[k] += 0.05f * static_cast<float>(f);
      clip.frames.push_back(fr);
    }
    real.push_back(clip);
    same.push_back(clip);
    VideoClip rev = clip;
    std::swap(rev.frames[0], rev.frames[3]);
    std::swap(rev.frames[1], rev.frames[2]);
    shuffled.push_back(rev);
  }
  const double d_same = fvd_like(real, same, oracle);
  const double d_shuf = fvd_like(real, shuffled, oracle);
  CHECK(d_same < 1e-8);
  CHECK(d_shuf > d_same);
}

TEST_CASE("feature sets carry the requested group key") {
  OracleClassifier oracle(tiny_oracle_config(), 145);
  Rng rng(146);
  std::vector<VideoClip> clips;
  clips.push_back(random_clip(rng, 3, 16, 1, 7));
  clips.push_back(random_clip(rng, 3, 16, 0, 9));

  FeatureSet by_class = video_feature_set(oracle, clips, false);
  CHECK(by_class.groups == std::vector<int>{1, 0});
  FeatureSet by_subject = video_feature_set(oracle, clips, true);
  CHECK(by_subject.groups == std::vector<int>{7, 9});
  CHECK(by_class.n() == 2);
  CHECK(by_class.d() == tiny_oracle_config().feature_dim);

  FeatureSet frames = frame_feature_set(oracle, clips, false);
  CHECK(frames.n() == 6);  // every frame contributes a row
  CHECK(frames.groups == std::vector<int>{1, 1, 1, 0, 0, 0});
}

TEST_CASE("condition accuracy counts oracle agreement") {
  OracleClassifier oracle(tiny_oracle_config(), 147);
  Rng rng(148);
  std::vector<VideoClip> clips;
  std::vector<int> requested;
  for (int i = 0; i < 5; ++i) {
    clips.push_back(random_clip(rng, 2, 16));
    requested.push_back(oracle.predict(clips.back()));
  }
  CHECK(condition_accuracy(clips, requested, oracle) == doctest::Approx(1.0));

  std::vector<int> wrong(requested);
  for (int& r : wrong) r = 1 - r;  // two-class flip
  CHECK(condition_accuracy(clips, wrong, oracle) == doctest::Approx(0.0));

  std::vector<int> half(requested);
  half[0] = 1 - half[0];
  CHECK(condition_accuracy(clips, half, oracle) == doctest::Approx(0.8));

  CHECK_THROWS_AS((void)condition_accuracy({}, {}, oracle),
                  std::runtime_error);
  CHECK_THROWS_AS((void)condition_accuracy(clips, {0}, oracle),
                  std::runtime_error);
}

TEST_CASE("l1 reconstruction error against stub reconstructions") {
  Rng rng(149);
  std::vector<Tensor> frames;
  for (int i = 0; i < 3; ++i)
    frames.push_back(random_tensor({3, 8, 8}, rng, 0.5f));

  // Identity reconstruction: exactly zero.
  CHECK(l1_reconstruction_error([](const Tensor& f) { return f; }, frames) ==
        doctest::Approx(0.0));

  // Constant-gray stub: error is the mean |frame - 0.5| over all frames.
  auto gray = [](const Tensor& f) { return Tensor(f.shape(), 0.5f); };
  double want = 0.0;
  int64_t count = 0;
  for (const Tensor& f : frames) {
    for (int64_t i = 0; i < f.numel(); ++i) want += std::abs(f[i] - 0.5f);
    count += f.numel();
  }
  want /= static_cast<double>(count);
  CHECK(l1_reconstruction_error(gray, frames) ==
        doctest::Approx(want).epsilon(1e-5));

  CHECK_THROWS_AS(
      (void)l1_reconstruction_error([](const Tensor& f) { return f; }, {}),
      std::runtime_error);
}

TEST_CASE("oracle save/load round-trips and fid_like sees identical sets") {
  OracleClassifier a(tiny_oracle_config(), 150);
  OracleClassifier b(tiny_oracle_config(), 151);
  REQUIRE(a.params().content_hash() != b.params().content_hash());
  const std::string path =
      (std::filesystem::temp_directory_path() / "lfdm_test_oracle.ckpt")
          .string();
  a.save(path);
  b.load(path);
  CHECK(a.params().content_hash() == b.params().content_hash());
  std::filesystem::remove(path);

  Rng rng(152);
  std::vector<VideoClip> real, fake;
  for (int i = 0; i < 4; ++i) {
    real.push_back(random_clip(rng, 2, 16, i % 2, i));
    fake.push_back(random_clip(rng, 2, 16, i % 2, i));
  }
  CHECK(fid_like(real, real, a) < 1e-8);
  CHECK(fid_like(real, fake, a) > 0.0);
  GroupedFrechet g = grouped_fvd(real, real, a, GroupKey::kClass);
  CHECK(g.mean < 1e-8);
}

}  // TEST_SUITE

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lfdm/pipeline.hpp"
#include "test_util.hpp"

using namespace lfdm;
using namespace lfdm::pipeline;
using test::max_abs_diff;
using test::random_tensor;

namespace fs = std::filesystem;

namespace {

lfae::LFAEConfig tiny_lfae_config() {
  lfae::LFAEConfig cfg;
  cfg.c_z = 4;
  cfg.enc_width = 8;
  cfg.flow_width = 8;
  cfg.dec_width = 32;
  return cfg;
}

// Stub hooks that code the inputs into constant planes so slice provenance
// is checkable: flow-x carries the driving frame's first value, flow-y the
// reference frame's, occlusion a fixed 0.25.
EncodeHook coded_encode() {
  return [](const Tensor& x) {
    Tensor z({2, 4, 4}, x[0]);
    return z;
  };
}

FlowHook coded_flow() {
  return [](const Tensor& ref, const Tensor& dri) {
    Tensor f({2, 4, 4});
    const int64_t plane = 16;
    for (int64_t i = 0; i < plane; ++i) {
      f[i] = dri[0];
      f[plane + i] = ref[0];
    }
    Tensor m({1, 4, 4}, 0.25f);
    return std::make_pair(f, m);
  };
}

VideoClip coded_clip(int frames) {
  VideoClip clip;
  clip.label = 1;
  for (int i = 0; i < frames; ++i) {
    Tensor fr({3, 8, 8}, 0.0f);
    fr[0] = 10.0f + static_cast<float>(i);  // frame identity marker
    clip.frames.push_back(fr);
  }
  return clip;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("flow extraction counts slices and pairs frames with x_0") {
  const VideoClip clip = coded_clip(5);

  Stage2Sample with_f0 =
      extract_flow_sequence(clip, coded_encode(), coded_flow(), true);
  CHECK(with_f0.s0.shape() == std::vector<int>{3, 5, 4, 4});
  CHECK(with_f0.z0.shape() == std::vector<int>{2, 4, 4});
  CHECK(with_f0.label == 1);
  CHECK(with_f0.z0[0] == doctest::Approx(10.0f));  // encode(x_0)

  // Slice i is the pair (x_0, x_i): flow-x codes x_i, flow-y codes x_0,
  // the occlusion channel stays raw.
  const int64_t plane = 16;
  const int L = 5;
  for (int i = 0; i < L; ++i) {
    CHECK(with_f0.s0[0 * L * plane + i * plane] ==
          doctest::Approx(10.0f + static_cast<float>(i)));
    CHECK(with_f0.s0[1 * L * plane + i * plane] == doctest::Approx(10.0f));
    CHECK(with_f0.s0[2 * L * plane + i * plane] == doctest::Approx(0.25f));
  }

  Stage2Sample without_f0 =
      extract_flow_sequence(clip, coded_encode(), coded_flow(), false);
  CHECK(without_f0.s0.shape() == std::vector<int>{3, 4, 4, 4});
  // First slice now comes from (x_0, x_1).
  CHECK(without_f0.s0[0] == doctest::Approx(11.0f));
}

TEST_CASE("slice i depends only on frame i (permutation invariance)") {
  VideoClip clip = coded_clip(4);
  Stage2Sample base =
      extract_flow_sequence(clip, coded_encode(), coded_flow(), true);
  // Alter frame 2; only its own slice may change (plus nothing else, since
  // x_0 stays fixed).
  clip.frames[2][0] = 99.0f;
  Stage2Sample mutated =
      extract_flow_sequence(clip, coded_encode(), coded_flow(), true);
  const int64_t plane = 16;
  const int L = 4;
  for (int i = 0; i < L; ++i) {
    const float delta = std::abs(mutated.s0[0 * L * plane + i * plane] -
                                 base.s0[0 * L * plane + i * plane]);
    if (i == 2)
      CHECK(delta > 0.0f);
    else
      CHECK(delta == 0.0f);
  }
}

TEST_CASE("flow normalizer fits the corpus max and round-trips exactly") {
  Stage2Sample a, b;
  a.s0 = Tensor({3, 1, 2, 2}, 0.0f);
  a.s0[0] = 4.0f;   // flow-x
  a.s0[5] = -2.5f;  // flow-y
  b.s0 = Tensor({3, 1, 2, 2}, 0.0f);
  b.s0[1] = -3.0f;
  FlowNormalizer norm = FlowNormalizer::fit({a, b});
  CHECK(norm.flow_constant == doctest::Approx(4.0f));

  // Small flows floor the constant at 1.
  Stage2Sample tiny;
  tiny.s0 = Tensor({3, 1, 2, 2}, 0.2f);
  CHECK(FlowNormalizer::fit({tiny}).flow_constant == doctest::Approx(1.0f));

  // Flow channels divide by the constant; occlusion maps [0,1] -> [-1,1].
  Tensor raw({3, 2, 2, 2});
  Rng rng(121);
  for (int64_t i = 0; i < 16; ++i) raw[i] = 8.0f * rng.uniform() - 4.0f;
  for (int64_t i = 16; i < 24; ++i) raw[i] = rng.uniform();
  Tensor n = norm.normalize(raw);
  CHECK(n[0] == doctest::Approx(raw[0] / 4.0f));
  CHECK(n[16] == doctest::Approx(2.0f * raw[16] - 1.0f));
  Tensor back = norm.denormalize(n);
  CHECK(max_abs_diff(back, raw) < 1e-6f);
}

TEST_CASE("decoded frames warp z_0 directly, so slices are independent") {
  lfae::LFAE model(tiny_lfae_config(), 122);
  Rng rng(123);
  Tensor x0 = random_tensor({3, 16, 16}, rng, 0.5f);
  const Tensor z0 =
      model.encode(Var(x0.reshaped({1, 3, 16, 16}))).val().reshaped({4, 4, 4});

  Tensor s0_raw({3, 3, 4, 4});
  for (int64_t i = 0; i < s0_raw.numel(); ++i)
    s0_raw[i] = rng.uniform() * 2.0f - 1.0f;
  // Keep occlusion in [0,1].
  for (int64_t i = 2 * 3 * 16; i < s0_raw.numel(); ++i)
    s0_raw[i] = rng.uniform();

  std::vector<Tensor> frames = decode_flow_volume(model, z0, s0_raw);
  REQUIRE(frames.size() == 3u);
  CHECK(frames[0].shape() == std::vector<int>{3, 16, 16});

  // Corrupt slice 1; frames 0 and 2 must not move at all.
  Tensor corrupted = s0_raw;
  for (int ch = 0; ch < 3; ++ch)
    corrupted[ch * 3 * 16 + 1 * 16 + 5] += 0.4f;
  std::vector<Tensor> frames2 = decode_flow_volume(model, z0, corrupted);
  CHECK(max_abs_diff(frames2[0], frames[0]) == 0.0f);
  CHECK(max_abs_diff(frames2[2], frames[2]) == 0.0f);
  CHECK(max_abs_diff(frames2[1], frames[1]) > 0.0f);
}

TEST_CASE("zero flow with unit mask decodes to a constant video") {
  lfae::LFAE model(tiny_lfae_config(), 124);
  Rng rng(125);
  Tensor x0 = random_tensor({3, 16, 16}, rng, 0.5f);
  const Tensor z0 =
      model.encode(Var(x0.reshaped({1, 3, 16, 16}))).val().reshaped({4, 4, 4});
  Tensor s0_raw({3, 4, 4, 4}, 0.0f);
  for (int64_t i = 2 * 4 * 16; i < s0_raw.numel(); ++i) s0_raw[i] = 1.0f;

  std::vector<Tensor> frames = decode_flow_volume(model, z0, s0_raw);
  const Tensor direct =
      model.decode(Var(z0.reshaped({1, 4, 4, 4}))).val().reshaped({3, 16, 16});
  for (const Tensor& f : frames) CHECK(max_abs_diff(f, direct) < 1e-6f);
}

TEST_CASE("occlusion values outside [0,1] are clamped before warping") {
  lfae::LFAE model(tiny_lfae_config(), 126);
  Rng rng(127);
  Tensor x0 = random_tensor({3, 16, 16}, rng, 0.5f);
  const Tensor z0 =
      model.encode(Var(x0.reshaped({1, 3, 16, 16}))).val().reshaped({4, 4, 4});
  Tensor a({3, 2, 4, 4}, 0.0f);
  Tensor b = a;
  for (int64_t i = 2 * 2 * 16; i < a.numel(); ++i) {
    a[i] = 1.0f;
    b[i] = 7.5f;  // an overshooting sampled mask
  }
  auto fa = decode_flow_volume(model, z0, a);
  auto fb = decode_flow_volume(model, z0, b);
  for (size_t i = 0; i < fa.size(); ++i)
    CHECK(max_abs_diff(fa[i], fb[i]) < 1e-6f);
}

TEST_CASE("stage-two training, generation and finetuning work end to end") {
  const fs::path root = fs::temp_directory_path() / "lfdm_test_pipeline";
  fs::remove_all(root);
  fs::create_directories(root);

  data::ToyDatasetSpec spec;
  spec.frame_size = 32;
  spec.clip_length = 3;
  spec.num_classes = 2;
  spec.num_subjects = 2;
  spec.rng_seed = 5;
  data::DatasetManifest manifest =
      data::generate_toy_dataset(spec, (root / "data").string());

  // Untrained but valid stage-one checkpoint.
  lfae::LFAEConfig s1cfg = tiny_lfae_config();
  lfae::LFAE stage1(s1cfg, 128);
  const std::string s1path = (root / "stage1.ckpt").string();
  stage1.save(s1path);
  lfae::save_lfae_metadata(s1path, s1cfg, 0, 128, 0);

  Stage2Config cfg;
  cfg.denoiser.base_channels = 4;
  cfg.denoiser.c_z = s1cfg.c_z;
  cfg.denoiser.emb_dim = 8;
  cfg.denoiser.num_classes = spec.num_classes;
  cfg.denoiser.attention = false;
  cfg.schedule_T = 5;
  cfg.volume_len = spec.clip_length;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.lr_decay_epochs = {};
  Rng rng(129);
  const std::string s2path = (root / "stage2").string();
  Stage2Result res = train_stage2(manifest, s1path, cfg, rng, s2path, 0);
  CHECK(res.epoch_losses.size() == 2u);
  for (float l : res.epoch_losses) CHECK(std::isfinite(l));
  CHECK(fs::exists(res.checkpoint_path));
  CHECK(res.normalizer.flow_constant >= 1.0f);

  // Generation: right geometry succeeds and is seed-deterministic.
  GenerationRequest req;
  req.x0 = data::render_frame(spec, 0, 0, 0, 0);
  req.label = 0;
  req.sampler = SamplerKind::kDDIM;
  req.steps = 2;
  req.seed = 7;
  VideoClip vid = generate_video(req, s1path, res.checkpoint_path);
  CHECK(static_cast<int>(vid.frames.size()) == cfg.volume_len);
  CHECK(vid.frames[0].shape() == std::vector<int>{3, 32, 32});
  CHECK(vid.label == 0);
  VideoClip vid2 = generate_video(req, s1path, res.checkpoint_path);
  for (size_t i = 0; i < vid.frames.size(); ++i)
    CHECK(max_abs_diff(vid.frames[i], vid2.frames[i]) == 0.0f);
  req.seed = 8;
  VideoClip vid3 = generate_video(req, s1path, res.checkpoint_path);
  CHECK(max_abs_diff(vid.frames[1], vid3.frames[1]) > 0.0f);

  // Mismatched conditioning geometry is refused.
  GenerationRequest bad = req;
  bad.x0 = Tensor({3, 16, 16}, 0.5f);
  CHECK_THROWS_AS((void)generate_video(bad, s1path, res.checkpoint_path),
                  std::runtime_error);

  // write_video_frames emits the dataset frame layout.
  const fs::path vdir = root / "video";
  write_video_frames(vid, vdir.string(), true);
  CHECK(fs::exists(vdir / "frame_0000.png"));
  CHECK(fs::exists(vdir / "frame_0002.png"));

  // Decoder finetuning never touches the encoder or flow predictor.
  FinetuneConfig ft;
  ft.epochs = 1;
  ft.batch_size = 2;
  ft.pairs_per_clip = 1;
  Rng ft_rng(130);
  FinetuneResult fres = finetune_decoder(manifest, s1path, ft, ft_rng,
                                         (root / "ft").string());
  CHECK(fres.enc_hash_before == fres.enc_hash_after);
  CHECK(fres.flow_hash_before == fres.flow_hash_after);
  CHECK(std::isfinite(fres.l1_before));
  CHECK(std::isfinite(fres.l1_after));
  CHECK(fs::exists(fres.checkpoint_path));

  fs::remove_all(root);
}

TEST_CASE("sampled flow volumes have the requested shape and determinism") {
  diffusion::DenoiserConfig dcfg;
  dcfg.base_channels = 4;
  dcfg.c_z = 2;
  dcfg.emb_dim = 8;
  dcfg.num_classes = 2;
  dcfg.attention = false;
  diffusion::Denoiser3D model(dcfg, 131);
  const diffusion::NoiseSchedule sched = diffusion::make_cosine_schedule(5);
  Rng rng(132);
  Tensor z0 = random_tensor({2, 8, 8}, rng);

  GenerationRequest req;
  req.label = 1;
  req.sampler = SamplerKind::kDDIM;
  req.steps = 3;
  req.seed = 11;
  Tensor a = sample_flow_volume(model, sched, z0, 4, req);
  CHECK(a.shape() == std::vector<int>{3, 4, 8, 8});
  Tensor b = sample_flow_volume(model, sched, z0, 4, req);
  CHECK(max_abs_diff(a, b) == 0.0f);
  req.sampler = SamplerKind::kDDPM;
  Tensor c = sample_flow_volume(model, sched, z0, 4, req);
  CHECK(c.shape() == a.shape());
  CHECK(max_abs_diff(a, c) > 0.0f);
}

}  // TEST_SUITE

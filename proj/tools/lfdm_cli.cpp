#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lfdm/config.hpp"
#include "lfdm/image.hpp"
#include "lfdm/kernels.hpp"
#include "lfdm/metrics.hpp"
#include "lfdm/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lfdm;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string profile = "desk";
  uint64_t seed = 0;
  bool seed_set = false;
};

config::RunConfig resolve_config(const CommonOpts& o) {
  config::RunConfig cfg = o.config_path.empty()
                              ? config::profile_by_name(o.profile)
                              : config::load_run_config(o.config_path);
  if (o.seed_set) cfg.seed = o.seed;
  cfg.dataset.rng_seed = cfg.seed;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "Run configuration file (JSON)");
  cmd->add_option("--profile", o.profile, "Built-in profile: desk|tiny|paper")
      ->check(CLI::IsMember({"desk", "tiny", "paper"}));
  cmd->add_option("--seed", o.seed, "Seed overriding the config value")
      ->each([&o](const std::string&) { o.seed_set = true; });
}

int label_from_name(const data::DatasetManifest* m, const std::string& name) {
  std::vector<std::string> names =
      m ? m->class_names : std::vector<std::string>{};
  if (names.empty())
    for (const auto& mo : data::default_motions()) names.push_back(mo.name);
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  check(false, "unknown class name: " + name);
  return -1;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// ---- gen-data ----
int cmd_gen_data(const CommonOpts& o, const std::string& out) {
  config::RunConfig cfg = resolve_config(o);
  data::DatasetManifest m = data::generate_toy_dataset(cfg.dataset, out);
  std::cout << "{\"event\":\"gen_data\",\"out\":\"" << out
            << "\",\"train_clips\":" << m.train.size()
            << ",\"test_clips\":" << m.test.size() << "}\n";
  return 0;
}

// ---- train-lfae ----
int cmd_train_lfae(const CommonOpts& o, const std::string& data_dir,
                   const std::string& out) {
  config::RunConfig cfg = resolve_config(o);
  auto m = data::DatasetManifest::load(data_dir + "/manifest.json");
  Rng rng(Rng::mix(cfg.seed, 0x731ULL));
  auto res = lfae::train_stage1(m, cfg.lfae, rng, out, config::config_hash(cfg));
  std::cout << "{\"event\":\"train_lfae_done\",\"checkpoint\":\""
            << res.checkpoint_path << "\",\"final_loss\":"
            << res.epoch_losses.back() << "}\n";
  return 0;
}

// ---- train-dm ----
int cmd_train_dm(const CommonOpts& o, const std::string& data_dir,
                 const std::string& stage1, const std::string& out) {
  config::RunConfig cfg = resolve_config(o);
  auto m = data::DatasetManifest::load(data_dir + "/manifest.json");
  Rng rng(Rng::mix(cfg.seed, 0x732ULL));
  auto res = pipeline::train_stage2(m, stage1, cfg.stage2, rng, out,
                                    config::config_hash(cfg));
  std::cout << "{\"event\":\"train_dm_done\",\"checkpoint\":\""
            << res.checkpoint_path << "\",\"final_loss\":"
            << res.epoch_losses.back() << "}\n";
  return 0;
}

// ---- sample ----
int cmd_sample(const CommonOpts& o, const std::string& stage1,
               const std::string& stage2, const std::string& image,
               const std::string& cls, const std::string& sampler, int steps,
               float g, int count, int subject, const std::string& out,
               bool contact_sheet) {
  config::RunConfig cfg = resolve_config(o);
  Tensor x0 = read_png_rgb(image);
  const int label =
      cls == "stochastic" ? diffusion::kNullLabel : label_from_name(nullptr, cls);

  data::DatasetManifest gen;
  gen.root = out;
  gen.frame_size = x0.dim(1);
  gen.num_classes = cfg.dataset.num_classes;
  for (const auto& mo : data::default_motions())
    gen.class_names.push_back(mo.name);
  fs::create_directories(out);

  for (int i = 0; i < count; ++i) {
    pipeline::GenerationRequest req;
    req.x0 = x0;
    req.label = label;
    req.sampler = sampler == "ddpm" ? pipeline::SamplerKind::kDDPM
                                    : pipeline::SamplerKind::kDDIM;
    req.steps = steps;
    req.g = g;
    req.seed = Rng::mix(cfg.seed, static_cast<uint64_t>(i));
    data::VideoClip clip = pipeline::generate_video(req, stage1, stage2);
    const std::string dir = "clip_" + std::to_string(i);
    pipeline::write_video_frames(clip, out + "/" + dir, contact_sheet);
    data::ClipRecord rec;
    rec.subject_id = subject;
    rec.label = label;
    rec.label_name = cls;
    rec.path = dir;
    rec.frame_count = static_cast<int>(clip.frames.size());
    gen.train.push_back(rec);
  }
  gen.save(out + "/manifest.json");
  std::cout << "{\"event\":\"sample_done\",\"out\":\"" << out
            << "\",\"count\":" << count << "}\n";
  return 0;
}

// ---- finetune-decoder ----
int cmd_finetune(const CommonOpts& o, const std::string& data_dir,
                 const std::string& stage1, const std::string& out,
                 int epochs) {
  config::RunConfig cfg = resolve_config(o);
  auto m = data::DatasetManifest::load(data_dir + "/manifest.json");
  pipeline::FinetuneConfig fcfg;
  if (epochs > 0) fcfg.epochs = epochs;
  Rng rng(Rng::mix(cfg.seed, 0x733ULL));
  auto res = pipeline::finetune_decoder(m, stage1, fcfg, rng, out);
  std::cout << "{\"event\":\"finetune_done\",\"checkpoint\":\""
            << res.checkpoint_path << "\",\"l1_before\":" << res.l1_before
            << ",\"l1_after\":" << res.l1_after << "}\n";
  return 0;
}

// ---- eval ----
std::vector<data::VideoClip> load_all(const data::DatasetManifest& m,
                                      const std::vector<data::ClipRecord>& recs) {
  std::vector<data::VideoClip> out;
  for (const auto& r : recs) out.push_back(data::load_clip(m, r));
  return out;
}

int cmd_eval(const CommonOpts& o, const std::string& real_dir,
             const std::string& fake_dir, const std::string& oracle_path,
             bool train_oracle, const std::string& stage1,
             const std::string& metric_list, const std::string& report_path) {
  config::RunConfig cfg = resolve_config(o);
  auto real_m = data::DatasetManifest::load(real_dir + "/manifest.json");

  std::set<std::string> wanted;
  {
    std::stringstream ss(metric_list);
    std::string tok;
    while (std::getline(ss, tok, ',')) wanted.insert(tok);
  }

  json report;
  report["config_hash"] = config::config_hash(cfg);

  std::unique_ptr<metrics::OracleClassifier> oracle;
  const bool needs_oracle =
      wanted.count("fvd") || wanted.count("cfvd") || wanted.count("sfvd") ||
      wanted.count("fid") || wanted.count("sfid") || wanted.count("cond-acc");
  if (needs_oracle) {
    check(!oracle_path.empty(), "--oracle is required for the chosen metrics");
    if (train_oracle) {
      Rng rng(Rng::mix(cfg.seed, 0x734ULL));
      auto tr = metrics::train_oracle_classifier(real_m, cfg.oracle, rng,
                                                 oracle_path);
      report["oracle_holdout_accuracy"] = tr.holdout_accuracy;
    }
    check(fs::exists(oracle_path),
          "missing oracle checkpoint: " + oracle_path +
              " (train one with --train-oracle)");
    oracle = std::make_unique<metrics::OracleClassifier>(
        metrics::load_oracle_config(oracle_path), 0);
    oracle->load(oracle_path);
  }

  std::vector<data::VideoClip> real, fake;
  if (needs_oracle || wanted.count("l1")) {
    auto& recs = real_m.test.empty() ? real_m.train : real_m.test;
    real = load_all(real_m, recs);
  }
  if (!fake_dir.empty()) {
    auto fake_m = data::DatasetManifest::load(fake_dir + "/manifest.json");
    fake = load_all(fake_m, fake_m.train);
  }

  if (wanted.count("l1")) {
    check(!stage1.empty(), "--stage1 is required for the l1 metric");
    lfae::LFAE model(lfae::load_lfae_config(stage1), 0);
    model.load(stage1);
    auto& recs = real_m.test.empty() ? real_m.train : real_m.test;
    report["l1"] = lfae::self_reconstruction_l1(model, real_m, recs);
  }
  if (wanted.count("fvd")) {
    check(!fake.empty(), "fvd needs --fake");
    report["fvd"] = metrics::fvd_like(real, fake, *oracle);
  }
  if (wanted.count("cfvd")) {
    check(!fake.empty(), "cfvd needs --fake");
    auto r = metrics::grouped_fvd(real, fake, *oracle, metrics::GroupKey::kClass);
    report["cfvd"] = {{"mean", r.mean}, {"std", r.stddev}};
  }
  if (wanted.count("sfvd")) {
    check(!fake.empty(), "sfvd needs --fake");
    auto r = metrics::grouped_fvd(real, fake, *oracle, metrics::GroupKey::kSubject);
    report["sfvd"] = {{"mean", r.mean}, {"std", r.stddev}};
  }
  if (wanted.count("fid")) {
    check(!fake.empty(), "fid needs --fake");
    report["fid"] = metrics::fid_like(real, fake, *oracle);
  }
  if (wanted.count("sfid")) {
    check(!fake.empty(), "sfid needs --fake");
    auto r = metrics::grouped_fid(real, fake, *oracle);
    report["sfid"] = {{"mean", r.mean}, {"std", r.stddev}};
  }
  if (wanted.count("cond-acc")) {
    check(!fake.empty(), "cond-acc needs --fake");
    std::vector<int> requested;
    for (const auto& c : fake) requested.push_back(c.label);
    report["cond_acc"] = metrics::condition_accuracy(fake, requested, *oracle);
  }
  report["n_real"] = real.size();
  report["n_fake"] = fake.size();

  const std::string text = report.dump(2);
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    check(f.good(), "cannot write report: " + report_path);
    f << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

// ---- bench-sampler ----
int cmd_bench_sampler(const CommonOpts& o, int ddim_steps,
                      const std::string& report_path) {
  config::RunConfig cfg = resolve_config(o);
  // Timing depends only on network geometry, not on trained weights.
  diffusion::Denoiser3D model(cfg.stage2.denoiser, 1);
  const int hz = cfg.dataset.frame_size / 4;
  Tensor z0({cfg.stage2.denoiser.c_z, hz, hz});
  Rng zr(1);
  fill_normal(z0, zr, 1.0f);
  const std::vector<int> shape = {3, cfg.stage2.volume_len, hz, hz};
  diffusion::EpsilonFn eps = [&](const Tensor& s, int t) {
    return model.eps(s, t, z0, 0);
  };

  auto time_ddpm = [&](int T) {
    diffusion::NoiseSchedule sched = diffusion::make_cosine_schedule(T);
    Rng rng(7);
    const auto t0 = std::chrono::steady_clock::now();
    (void)diffusion::ddpm_sample(eps, shape, sched, rng);
    return seconds_since(t0);
  };
  diffusion::NoiseSchedule sched =
      diffusion::make_cosine_schedule(cfg.stage2.schedule_T);
  auto time_ddim = [&](int steps) {
    Rng rng(7);
    const auto t0 = std::chrono::steady_clock::now();
    (void)diffusion::ddim_sample(eps, shape, sched, steps, rng);
    return seconds_since(t0);
  };

  const double t_ddim = time_ddim(ddim_steps);
  const double t_ddpm_half = time_ddpm(cfg.stage2.schedule_T / 2);
  const double t_ddpm = time_ddpm(cfg.stage2.schedule_T);

  json report;
  report["schedule_T"] = cfg.stage2.schedule_T;
  report["ddim_steps"] = ddim_steps;
  report["ddim_seconds"] = t_ddim;
  report["ddpm_seconds"] = t_ddpm;
  report["ddpm_half_T_seconds"] = t_ddpm_half;
  report["speedup"] = t_ddpm / t_ddim;
  report["ddpm_linearity_ratio"] = t_ddpm / (2.0 * t_ddpm_half);
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    check(f.good(), "cannot write report: " + report_path);
    f << report.dump(2) << "\n";
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---- ablate ----
int cmd_ablate(const CommonOpts& o, const std::string& kind,
               const std::string& data_dir, const std::string& stage1,
               const std::string& stage2, const std::string& report_path) {
  config::RunConfig cfg = resolve_config(o);
  json report;
  report["kind"] = kind;
  json rows = json::array();

  auto guarded = [&](const std::string& name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      rows.push_back({{"row", name}, {"unavailable", e.what()}});
    }
  };

  if (kind == "decoder-depth" || kind == "occlusion") {
    auto m = data::DatasetManifest::load(data_dir + "/manifest.json");
    auto run_stage1 = [&](const lfae::LFAEConfig& c, const std::string& tag) {
      Rng rng(Rng::mix(cfg.seed, std::hash<std::string>{}(tag)));
      const std::string ckpt =
          (fs::temp_directory_path() / ("lfdm_ablate_" + tag + ".ckpt")).string();
      const auto t0 = std::chrono::steady_clock::now();
      auto res = lfae::train_stage1(m, c, rng, ckpt, 0);
      const double secs = seconds_since(t0);
      lfae::LFAE model(c, 0);
      model.load(ckpt);
      auto& recs = m.test.empty() ? m.train : m.test;
      const float l1 = lfae::self_reconstruction_l1(model, m, recs);
      return std::tuple<float, double, std::string>(l1, secs, ckpt);
    };
    if (kind == "decoder-depth") {
      // FVD analogue per depth: distance between real test clips and their
      // self-reconstructions, judged by an oracle trained once up front.
      const std::string opath =
          (fs::temp_directory_path() / "lfdm_ablate_oracle.ckpt").string();
      Rng orng(Rng::mix(cfg.seed, 0x07acULL));
      (void)metrics::train_oracle_classifier(m, cfg.oracle, orng, opath);
      metrics::OracleClassifier oracle(metrics::load_oracle_config(opath), 0);
      oracle.load(opath);
      auto& recs = m.test.empty() ? m.train : m.test;
      const std::vector<data::VideoClip> real = load_all(m, recs);
      for (int blocks : {6, 10}) {
        guarded("blocks_" + std::to_string(blocks), [&] {
          lfae::LFAEConfig c = cfg.lfae;
          c.dec_residual_blocks = blocks;
          auto [l1, secs, ckpt] = run_stage1(c, "dec" + std::to_string(blocks));
          lfae::LFAE model(c, 0);
          model.load(ckpt);
          std::vector<data::VideoClip> recon;
          for (const auto& clip : real) {
            data::VideoClip r = clip;
            for (auto& fr : r.frames) {
              Var x(fr.reshaped({1, 3, fr.dim(1), fr.dim(2)}));
              fr = model.reconstruct(x, x).val().reshaped(
                  {3, fr.dim(1), fr.dim(2)});
            }
            recon.push_back(std::move(r));
          }
          rows.push_back({{"dec_residual_blocks", blocks},
                          {"l1", l1},
                          {"fvd_analogue", metrics::fvd_like(real, recon, oracle)},
                          {"train_seconds", secs}});
        });
      }
    } else {
      float l1_with = -1.0f, l1_without = -1.0f;
      guarded("occlusion_on", [&] {
        lfae::LFAEConfig c = cfg.lfae;
        c.use_occlusion = true;
        auto [l1, secs, ckpt] = run_stage1(c, "occ1");
        l1_with = l1;
        rows.push_back({{"occlusion", true}, {"l1", l1}, {"train_seconds", secs}});
      });
      guarded("occlusion_off", [&] {
        lfae::LFAEConfig c = cfg.lfae;
        c.use_occlusion = false;
        auto [l1, secs, ckpt] = run_stage1(c, "occ0");
        l1_without = l1;
        rows.push_back({{"occlusion", false}, {"l1", l1}, {"train_seconds", secs}});
      });
      if (l1_with >= 0.0f && l1_without >= 0.0f) {
        report["l1_difference"] = l1_without - l1_with;
        report["with_occlusion_not_worse"] = l1_with <= l1_without;
      }
    }
  } else if (kind == "dm-depth") {
    auto m = data::DatasetManifest::load(data_dir + "/manifest.json");
    check(!stage1.empty(), "dm-depth ablation needs --stage1");
    for (const auto& mult :
         std::vector<std::vector<int>>{{1, 2, 4, 8}, {1, 2, 4, 8, 16}}) {
      std::string tag = "m";
      for (int v : mult) tag += std::to_string(v);
      guarded(tag, [&] {
        pipeline::Stage2Config c = cfg.stage2;
        c.denoiser.channel_multipliers = mult;
        Rng rng(Rng::mix(cfg.seed, std::hash<std::string>{}(tag)));
        const std::string ckpt =
            (fs::temp_directory_path() / ("lfdm_ablate_" + tag + ".ckpt")).string();
        const auto t0 = std::chrono::steady_clock::now();
        auto res = pipeline::train_stage2(m, stage1, c, rng, ckpt, 0);
        rows.push_back({{"channel_multipliers", mult},
                        {"final_loss", res.epoch_losses.back()},
                        {"train_seconds", seconds_since(t0)}});
      });
    }
  } else if (kind == "sampler") {
    check(!stage1.empty() && !stage2.empty(),
          "sampler ablation needs --stage1 and --stage2");
    auto meta = diffusion::load_denoiser_meta(stage2);
    auto m = data::DatasetManifest::load(data_dir + "/manifest.json");
    check(!m.train.empty(), "sampler ablation needs dataset clips");
    data::VideoClip ref = data::load_clip(m, m.train.front());
    struct Row {
      std::string name;
      pipeline::SamplerKind kind;
      int steps;
    };
    for (const Row& r : {Row{"ddim-10", pipeline::SamplerKind::kDDIM, 10},
                         Row{"ddim-100", pipeline::SamplerKind::kDDIM, 100},
                         Row{"ddpm-T", pipeline::SamplerKind::kDDPM,
                             meta.schedule_T}}) {
      guarded(r.name, [&] {
        if (r.kind == pipeline::SamplerKind::kDDIM)
          check(r.steps <= meta.schedule_T,
                r.name + " exceeds the trained schedule length");
        pipeline::GenerationRequest req;
        req.x0 = ref.frames.front();
        req.label = ref.label;
        req.sampler = r.kind;
        req.steps = r.steps;
        req.seed = cfg.seed;
        const auto t0 = std::chrono::steady_clock::now();
        (void)pipeline::generate_video(req, stage1, stage2);
        rows.push_back({{"sampler", r.name},
                        {"steps", r.steps},
                        {"seconds_per_video", seconds_since(t0)}});
      });
    }
  } else {
    check(false, "unknown ablation kind: " + kind);
  }

  report["rows"] = rows;
  if (!report_path.empty()) {
    std::ofstream f(report_path);
    check(f.good(), "cannot write report: " + report_path);
    f << report.dump(2) << "\n";
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent flow diffusion: toy-video generation workbench"};
  app.require_subcommand(1);
  kernels::backend_from_env();

  CommonOpts o;
  std::string out, data_dir, stage1, stage2, image, oracle_path, report_path;
  std::string cls = "stochastic", sampler = "ddim";
  std::string metric_list = "fvd,l1";
  std::string kind;
  std::string real_dir, fake_dir;
  int steps = 10, count = 1, subject = 0, ft_epochs = 0, bench_steps = 10;
  float g = 1.0f;
  bool contact_sheet = false, train_oracle = false;

  auto* c_gen = app.add_subcommand("gen-data", "Render the toy video corpus");
  add_common(c_gen, o);
  c_gen->add_option("--out", out, "Output directory")->required();

  auto* c_lfae = app.add_subcommand("train-lfae", "Train the stage-one auto-encoder");
  add_common(c_lfae, o);
  c_lfae->add_option("--data", data_dir, "Dataset directory")->required();
  c_lfae->add_option("--out", out, "Checkpoint path")->required();

  auto* c_dm = app.add_subcommand("train-dm", "Train the stage-two diffusion model");
  add_common(c_dm, o);
  c_dm->add_option("--data", data_dir, "Dataset directory")->required();
  c_dm->add_option("--stage1", stage1, "Stage-one checkpoint")->required();
  c_dm->add_option("--out", out, "Checkpoint path")->required();

  auto* c_sample = app.add_subcommand("sample", "Generate videos from a frame");
  add_common(c_sample, o);
  c_sample->add_option("--stage1", stage1, "Stage-one checkpoint")->required();
  c_sample->add_option("--stage2", stage2, "Stage-two checkpoint")->required();
  c_sample->add_option("--image", image, "Conditioning frame (PNG)")->required();
  c_sample->add_option("--class", cls, "Class name or 'stochastic'");
  c_sample->add_option("--sampler", sampler, "ddpm|ddim")
      ->check(CLI::IsMember({"ddpm", "ddim"}));
  c_sample->add_option("--steps", steps, "DDIM step count");
  c_sample->add_option("--g", g, "Guidance scale");
  c_sample->add_option("--count", count, "Number of videos");
  c_sample->add_option("--subject", subject, "Subject id recorded in the manifest");
  c_sample->add_option("--out", out, "Output directory")->required();
  c_sample->add_flag("--contact-sheet", contact_sheet, "Also write a tiled sheet");

  auto* c_ft = app.add_subcommand("finetune-decoder",
                                  "Decoder-only finetuning on a new domain");
  add_common(c_ft, o);
  c_ft->add_option("--data", data_dir, "New-domain dataset directory")->required();
  c_ft->add_option("--stage1", stage1, "Stage-one checkpoint")->required();
  c_ft->add_option("--out", out, "Checkpoint path")->required();
  c_ft->add_option("--epochs", ft_epochs, "Override finetune epochs");

  auto* c_eval = app.add_subcommand("eval", "Compute evaluation metrics");
  add_common(c_eval, o);
  c_eval->add_option("--real", real_dir, "Real dataset directory")->required();
  c_eval->add_option("--fake", fake_dir, "Generated dataset directory");
  c_eval->add_option("--oracle", oracle_path, "Oracle classifier checkpoint");
  c_eval->add_flag("--train-oracle", train_oracle,
                   "Train the oracle on --real first and save to --oracle");
  c_eval->add_option("--stage1", stage1, "Stage-one checkpoint (for l1)");
  c_eval->add_option("--metrics", metric_list,
                     "Comma list: fvd,cfvd,sfvd,fid,sfid,l1,cond-acc");
  c_eval->add_option("--report", report_path, "Report file (JSON)");

  auto* c_bench = app.add_subcommand("bench-sampler",
                                     "Time DDPM vs DDIM sampling");
  add_common(c_bench, o);
  c_bench->add_option("--steps", bench_steps, "DDIM step count");
  c_bench->add_option("--report", report_path, "Report file (JSON)");

  auto* c_abl = app.add_subcommand("ablate", "Run a paired ablation");
  add_common(c_abl, o);
  c_abl->add_option("--kind", kind,
                    "decoder-depth|dm-depth|occlusion|sampler")
      ->required()
      ->check(CLI::IsMember({"decoder-depth", "dm-depth", "occlusion", "sampler"}));
  c_abl->add_option("--data", data_dir, "Dataset directory")->required();
  c_abl->add_option("--stage1", stage1, "Stage-one checkpoint");
  c_abl->add_option("--stage2", stage2, "Stage-two checkpoint");
  c_abl->add_option("--report", report_path, "Report file (JSON)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_gen->parsed()) return cmd_gen_data(o, out);
    if (c_lfae->parsed()) return cmd_train_lfae(o, data_dir, out);
    if (c_dm->parsed()) return cmd_train_dm(o, data_dir, stage1, out);
    if (c_sample->parsed())
      return cmd_sample(o, stage1, stage2, image, cls, sampler, steps, g,
                        count, subject, out, contact_sheet);
    if (c_ft->parsed()) return cmd_finetune(o, data_dir, stage1, out, ft_epochs);
    if (c_eval->parsed())
      return cmd_eval(o, real_dir, fake_dir, oracle_path, train_oracle, stage1,
                      metric_list, report_path);
    if (c_bench->parsed()) return cmd_bench_sampler(o, bench_steps, report_path);
    if (c_abl->parsed())
      return cmd_ablate(o, kind, data_dir, stage1, stage2, report_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

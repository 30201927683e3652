#include "lfdm/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace lfdm::config {

using json = nlohmann::json;

void RunConfig::validate() const {
  dataset.validate();
  lfae.validate();
  stage2.validate();
  oracle.validate();
  check(lfae.c_z == stage2.denoiser.c_z,
        "lfae.c_z must equal stage2.denoiser.c_z");
  check(dataset.num_classes == stage2.denoiser.num_classes,
        "dataset.num_classes must equal stage2.denoiser.num_classes");
  check(dataset.num_classes == oracle.num_classes,
        "dataset.num_classes must equal oracle.num_classes");
  const int expected_len =
      stage2.include_f0 ? dataset.clip_length : dataset.clip_length - 1;
  check(stage2.volume_len == expected_len,
        "stage2.volume_len must match dataset.clip_length (" +
            std::to_string(expected_len) + ")");
  check(sampling.steps >= 1, "sampling.steps must be >= 1");
}

RunConfig desk_profile() {
  RunConfig c;
  c.dataset.frame_size = 64;
  c.dataset.clip_length = 17;  // K = 16
  c.dataset.num_subjects = 4;
  c.dataset.clips_per_subject_class = 4;  // 128 clips

  c.lfae.c_z = 16;
  c.lfae.enc_width = 16;
  c.lfae.flow_width = 16;
  c.lfae.dec_width = 32;
  c.lfae.batch_size = 8;
  c.lfae.epochs = 4;
  c.lfae.lr = 1e-3f;
  c.lfae.lr_decay_epochs = {3};
  c.lfae.pairs_per_clip = 2;

  c.stage2.schedule_T = 200;
  c.stage2.volume_len = 17;
  c.stage2.epochs = 30;
  c.stage2.batch_size = 8;
  c.stage2.lr = 1e-3f;
  c.stage2.lr_decay_epochs = {20, 26};
  c.stage2.denoiser.base_channels = 32;
  c.stage2.denoiser.c_z = 16;
  c.stage2.denoiser.emb_dim = 64;
  c.stage2.denoiser.num_classes = 8;
  c.stage2.denoiser.attention = true;

  c.oracle.epochs = 30;
  return c;
}

RunConfig tiny_profile() {
  RunConfig c;
  c.dataset.frame_size = 32;
  c.dataset.clip_length = 9;  // K = 8
  c.dataset.num_subjects = 2;
  c.dataset.clips_per_subject_class = 1;

  c.lfae.c_z = 8;
  c.lfae.enc_width = 8;
  c.lfae.flow_width = 8;
  c.lfae.dec_width = 16;
  c.lfae.batch_size = 4;
  c.lfae.epochs = 2;
  c.lfae.lr = 1e-3f;
  c.lfae.lr_decay_epochs = {};
  c.lfae.pairs_per_clip = 1;

  c.stage2.schedule_T = 20;
  c.stage2.volume_len = 9;
  c.stage2.epochs = 2;
  c.stage2.batch_size = 4;
  c.stage2.lr = 1e-3f;
  c.stage2.lr_decay_epochs = {};
  c.stage2.denoiser.base_channels = 8;
  c.stage2.denoiser.c_z = 8;
  c.stage2.denoiser.emb_dim = 32;
  c.stage2.denoiser.num_classes = 8;
  c.stage2.denoiser.attention = false;

  c.oracle.base_channels = 8;
  c.oracle.feature_dim = 32;
  c.oracle.epochs = 4;
  c.sampling.steps = 5;
  return c;
}

RunConfig paper_profile() {
  RunConfig c;
  c.dataset.frame_size = 128;
  c.dataset.clip_length = 41;  // K = 40
  c.dataset.num_subjects = 8;
  c.dataset.clips_per_subject_class = 8;

  // Published stage-one schedule: batch 100, 100 epochs, lr 2e-4 with x0.1
  // decay at epochs 60 and 90.
  c.lfae = lfae::LFAEConfig{};

  c.stage2.schedule_T = 1000;
  c.stage2.volume_len = 41;
  c.stage2.epochs = 1200;
  c.stage2.batch_size = 20;
  c.stage2.lr = 2e-4f;
  c.stage2.lr_decay_epochs = {800, 1000};
  c.stage2.denoiser = diffusion::DenoiserConfig{};
  return c;
}

RunConfig profile_by_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "tiny") return tiny_profile();
  if (name == "paper") return paper_profile();
  check(false, "unknown profile: " + name + " (expected desk|tiny|paper)");
  return {};
}

namespace {

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  check(j.is_object(), "config section '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    check(allowed.count(k) > 0,
          "unknown config key '" + where + "." + k + "'");
  }
}

template <typename T>
void opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void parse_dataset(const json& j, data::ToyDatasetSpec& d) {
  require_keys(j, "dataset",
               {"frame_size", "clip_length", "num_classes", "num_subjects",
                "clips_per_subject_class", "rng_seed"});
  opt(j, "frame_size", d.frame_size);
  opt(j, "clip_length", d.clip_length);
  int num_classes = d.num_classes;
  opt(j, "num_classes", num_classes);
  if (num_classes != d.num_classes) {
    check(num_classes >= 1 &&
              num_classes <= static_cast<int>(data::default_motions().size()),
          "dataset.num_classes must be 1.." +
              std::to_string(data::default_motions().size()));
    d.num_classes = num_classes;
    d.class_motions.resize(static_cast<size_t>(num_classes));
  }
  opt(j, "num_subjects", d.num_subjects);
  opt(j, "clips_per_subject_class", d.clips_per_subject_class);
  opt(j, "rng_seed", d.rng_seed);
}

void parse_lfae(const json& j, lfae::LFAEConfig& c) {
  require_keys(j, "lfae",
               {"c_z", "enc_width", "flow_width", "dec_width",
                "dec_residual_blocks", "use_occlusion", "batch_size", "epochs",
                "lr", "lr_decay_epochs", "lr_decay_factor", "pairs_per_clip"});
  opt(j, "c_z", c.c_z);
  opt(j, "enc_width", c.enc_width);
  opt(j, "flow_width", c.flow_width);
  opt(j, "dec_width", c.dec_width);
  opt(j, "dec_residual_blocks", c.dec_residual_blocks);
  opt(j, "use_occlusion", c.use_occlusion);
  opt(j, "batch_size", c.batch_size);
  opt(j, "epochs", c.epochs);
  opt(j, "lr", c.lr);
  opt(j, "lr_decay_epochs", c.lr_decay_epochs);
  opt(j, "lr_decay_factor", c.lr_decay_factor);
  opt(j, "pairs_per_clip", c.pairs_per_clip);
}

void parse_denoiser(const json& j, diffusion::DenoiserConfig& c) {
  require_keys(j, "stage2.denoiser",
               {"base_channels", "channel_multipliers", "c_z", "emb_dim",
                "num_classes", "attention"});
  opt(j, "base_channels", c.base_channels);
  opt(j, "channel_multipliers", c.channel_multipliers);
  opt(j, "c_z", c.c_z);
  opt(j, "emb_dim", c.emb_dim);
  opt(j, "num_classes", c.num_classes);
  opt(j, "attention", c.attention);
}

void parse_stage2(const json& j, pipeline::Stage2Config& c) {
  require_keys(j, "stage2",
               {"schedule_T", "volume_len", "include_f0", "epochs",
                "batch_size", "lr", "lr_decay_epochs", "lr_decay_factor",
                "p_null", "denoiser"});
  opt(j, "schedule_T", c.schedule_T);
  opt(j, "volume_len", c.volume_len);
  opt(j, "include_f0", c.include_f0);
  opt(j, "epochs", c.epochs);
  opt(j, "batch_size", c.batch_size);
  opt(j, "lr", c.lr);
  opt(j, "lr_decay_epochs", c.lr_decay_epochs);
  opt(j, "lr_decay_factor", c.lr_decay_factor);
  opt(j, "p_null", c.p_null);
  if (j.contains("denoiser")) parse_denoiser(j.at("denoiser"), c.denoiser);
}

void parse_oracle(const json& j, metrics::OracleConfig& c) {
  require_keys(j, "oracle",
               {"base_channels", "feature_dim", "num_classes", "epochs",
                "batch_size", "lr"});
  opt(j, "base_channels", c.base_channels);
  opt(j, "feature_dim", c.feature_dim);
  opt(j, "num_classes", c.num_classes);
  opt(j, "epochs", c.epochs);
  opt(j, "batch_size", c.batch_size);
  opt(j, "lr", c.lr);
}

void parse_sampling(const json& j, SamplingDefaults& c) {
  require_keys(j, "sampling", {"sampler", "steps", "g"});
  if (j.contains("sampler")) {
    const std::string s = j.at("sampler").get<std::string>();
    check(s == "ddpm" || s == "ddim", "sampling.sampler must be ddpm|ddim");
    c.sampler = s == "ddpm" ? pipeline::SamplerKind::kDDPM
                            : pipeline::SamplerKind::kDDIM;
  }
  opt(j, "steps", c.steps);
  opt(j, "g", c.g);
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_root"] = c.output_root;
  j["dataset"] = {{"frame_size", c.dataset.frame_size},
                  {"clip_length", c.dataset.clip_length},
                  {"num_classes", c.dataset.num_classes},
                  {"num_subjects", c.dataset.num_subjects},
                  {"clips_per_subject_class", c.dataset.clips_per_subject_class},
                  {"rng_seed", c.dataset.rng_seed}};
  j["lfae"] = {{"c_z", c.lfae.c_z},
               {"enc_width", c.lfae.enc_width},
               {"flow_width", c.lfae.flow_width},
               {"dec_width", c.lfae.dec_width},
               {"dec_residual_blocks", c.lfae.dec_residual_blocks},
               {"use_occlusion", c.lfae.use_occlusion},
               {"batch_size", c.lfae.batch_size},
               {"epochs", c.lfae.epochs},
               {"lr", c.lfae.lr},
               {"lr_decay_epochs", c.lfae.lr_decay_epochs},
               {"lr_decay_factor", c.lfae.lr_decay_factor},
               {"pairs_per_clip", c.lfae.pairs_per_clip}};
  j["stage2"] = {{"schedule_T", c.stage2.schedule_T},
                 {"volume_len", c.stage2.volume_len},
                 {"include_f0", c.stage2.include_f0},
                 {"epochs", c.stage2.epochs},
                 {"batch_size", c.stage2.batch_size},
                 {"lr", c.stage2.lr},
                 {"lr_decay_epochs", c.stage2.lr_decay_epochs},
                 {"lr_decay_factor", c.stage2.lr_decay_factor},
                 {"p_null", c.stage2.p_null},
                 {"denoiser",
                  {{"base_channels", c.stage2.denoiser.base_channels},
                   {"channel_multipliers", c.stage2.denoiser.channel_multipliers},
                   {"c_z", c.stage2.denoiser.c_z},
                   {"emb_dim", c.stage2.denoiser.emb_dim},
                   {"num_classes", c.stage2.denoiser.num_classes},
                   {"attention", c.stage2.denoiser.attention}}}};
  j["oracle"] = {{"base_channels", c.oracle.base_channels},
                 {"feature_dim", c.oracle.feature_dim},
                 {"num_classes", c.oracle.num_classes},
                 {"epochs", c.oracle.epochs},
                 {"batch_size", c.oracle.batch_size},
                 {"lr", c.oracle.lr}};
  j["sampling"] = {
      {"sampler",
       c.sampling.sampler == pipeline::SamplerKind::kDDPM ? "ddpm" : "ddim"},
      {"steps", c.sampling.steps},
      {"g", c.sampling.g}};
  return j;
}

}  // namespace

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    check(false, "config parse error in " + path + ": " + e.what());
  }
  require_keys(j, "<root>",
               {"profile", "seed", "output_root", "dataset", "lfae", "stage2",
                "oracle", "sampling"});
  std::string profile = "desk";
  opt(j, "profile", profile);
  RunConfig c = profile_by_name(profile);
  opt(j, "seed", c.seed);
  opt(j, "output_root", c.output_root);
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), c.dataset);
  if (j.contains("lfae")) parse_lfae(j.at("lfae"), c.lfae);
  if (j.contains("stage2")) parse_stage2(j.at("stage2"), c.stage2);
  if (j.contains("oracle")) parse_oracle(j.at("oracle"), c.oracle);
  if (j.contains("sampling")) parse_sampling(j.at("sampling"), c.sampling);
  c.validate();
  return c;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  check(f.good(), "cannot write config file: " + path);
  f << to_json(cfg).dump(2) << "\n";
}

uint64_t config_hash(const RunConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace lfdm::config

#pragma once

#include <string>

#include "lfdm/dataset.hpp"
#include "lfdm/lfae.hpp"
#include "lfdm/metrics.hpp"
#include "lfdm/pipeline.hpp"

namespace lfdm::config {

struct SamplingDefaults {
  pipeline::SamplerKind sampler = pipeline::SamplerKind::kDDIM;
  int steps = 10;
  float g = 1.0f;
};

// Everything a full run needs, and what every artifact's config hash is
// computed over.
struct RunConfig {
  uint64_t seed = 0;
  std::string output_root = "runs";
  data::ToyDatasetSpec dataset;
  lfae::LFAEConfig lfae;
  pipeline::Stage2Config stage2;
  metrics::OracleConfig oracle;
  SamplingDefaults sampling;

  void validate() const;
};

// Built-in profiles.
// desk: 64x64 frames, K = 16, T = 200, base channels 32 — the default
//       workstation-scale configuration.
// tiny: 32x32 frames, K = 8, shallow nets and few epochs for smoke runs.
// paper: published-scale values (128x128, K = 40, T = 1000, base 64),
//        recorded for documentation; not sized for a desktop.
RunConfig desk_profile();
RunConfig tiny_profile();
RunConfig paper_profile();
RunConfig profile_by_name(const std::string& name);

// Strict parse: unknown keys anywhere in the file are errors. Values start
// from the profile named in the optional "profile" key (default "desk") and
// present keys override it.
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

// FNV-1a over the canonical serialized form.
uint64_t config_hash(const RunConfig& cfg);

}  // namespace lfdm::config

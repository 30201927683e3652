#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lfdm/config.hpp"

using namespace lfdm;
using namespace lfdm::config;

namespace fs = std::filesystem;

namespace {

fs::path write_file(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / name;
  std::ofstream f(p);
  f << body;
  return p;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("built-in profiles validate and expose their signatures") {
  const RunConfig desk = desk_profile();
  desk.validate();
  CHECK(desk.dataset.frame_size == 64);
  CHECK(desk.dataset.clip_length == 17);  // K = 16 plus the reference frame
  CHECK(desk.stage2.schedule_T == 200);

  const RunConfig tiny = tiny_profile();
  tiny.validate();
  CHECK(tiny.dataset.frame_size == 32);
  CHECK(tiny.dataset.clip_length == 9);  // K = 8
  CHECK_FALSE(tiny.stage2.denoiser.attention);

  const RunConfig paper = paper_profile();
  paper.validate();
  CHECK(paper.dataset.frame_size == 128);
  CHECK(paper.dataset.clip_length == 41);  // K = 40
  CHECK(paper.stage2.schedule_T == 1000);

  CHECK(profile_by_name("desk").dataset.frame_size == 64);
  CHECK(profile_by_name("tiny").dataset.frame_size == 32);
  CHECK(profile_by_name("paper").dataset.frame_size == 128);
  CHECK_THROWS_AS((void)profile_by_name("huge"), std::runtime_error);
}

TEST_CASE("config files round-trip through save and strict load") {
  RunConfig cfg = tiny_profile();
  cfg.seed = 1234;
  cfg.output_root = "elsewhere";
  cfg.lfae.epochs = 3;
  cfg.stage2.p_null = 0.2f;
  cfg.sampling.steps = 25;

  const fs::path p = fs::temp_directory_path() / "lfdm_test_cfg.json";
  save_run_config(cfg, p.string());
  const RunConfig back = load_run_config(p.string());
  CHECK(back.seed == 1234u);
  CHECK(back.output_root == "elsewhere");
  CHECK(back.lfae.epochs == 3);
  CHECK(back.stage2.p_null == doctest::Approx(0.2f));
  CHECK(back.sampling.steps == 25);
  CHECK(config_hash(back) == config_hash(cfg));
  fs::remove(p);
}

TEST_CASE("the profile key selects the base and overrides apply on top") {
  const fs::path p = write_file("lfdm_test_cfg_profile.json",
                                R"({"profile": "tiny", "seed": 42})");
  const RunConfig cfg = load_run_config(p.string());
  CHECK(cfg.seed == 42u);
  CHECK(cfg.dataset.frame_size == 32);  // inherited from the tiny base
  fs::remove(p);

  // Default base is desk.
  const fs::path q = write_file("lfdm_test_cfg_bare.json", R"({"seed": 1})");
  CHECK(load_run_config(q.string()).dataset.frame_size == 64);
  fs::remove(q);
}

TEST_CASE("unknown keys are rejected at every nesting level") {
  for (const std::string body : {
           R"({"profile": "tiny", "bogus": 1})",
           R"({"profile": "tiny", "dataset": {"frame_sizes": 32}})",
           R"({"profile": "tiny", "stage2": {"denoiser": {"depth": 3}}})",
           R"({"profile": "tiny", "sampling": {"sampler": "ddim", "x": 0}})",
       }) {
    const fs::path p = write_file("lfdm_test_cfg_bad.json", body);
    CHECK_THROWS_AS((void)load_run_config(p.string()), std::runtime_error);
    fs::remove(p);
  }
}

TEST_CASE("invalid cross-field combinations fail validation") {
  RunConfig cfg = tiny_profile();
  cfg.stage2.volume_len = cfg.dataset.clip_length + 3;
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);

  cfg = tiny_profile();
  cfg.stage2.denoiser.num_classes = cfg.dataset.num_classes - 1;
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);

  cfg = tiny_profile();
  cfg.dataset.frame_size = 30;  // not divisible by 4
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);

  cfg = tiny_profile();
  cfg.lfae.c_z = cfg.stage2.denoiser.c_z + 1;
  CHECK_THROWS_AS(cfg.validate(), std::runtime_error);
}

TEST_CASE("the hash changes with any field and is stable otherwise") {
  const RunConfig base = tiny_profile();
  const uint64_t h = config_hash(base);
  CHECK(config_hash(tiny_profile()) == h);

  RunConfig m = base;
  m.seed = base.seed + 1;
  CHECK(config_hash(m) != h);
  m = base;
  m.lfae.lr = base.lfae.lr * 2.0f;
  CHECK(config_hash(m) != h);
  m = base;
  m.stage2.schedule_T += 1;
  CHECK(config_hash(m) != h);
  m = base;
  m.oracle.epochs += 1;
  CHECK(config_hash(m) != h);
  m = base;
  m.sampling.g = base.sampling.g + 0.5f;
  CHECK(config_hash(m) != h);
  m = base;
  m.dataset.rng_seed += 1;
  CHECK(config_hash(m) != h);
}

}  // TEST_SUITE

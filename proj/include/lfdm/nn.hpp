#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lfdm/autograd.hpp"

namespace lfdm {

// Deterministic RNG handle. All stochastic operations take one of these
// explicitly; streams for parallel work are derived with Rng::fork.
class Rng {
 public:
  explicit Rng(uint64_t seed) : g_(seed) {}

  float uniform() { return std::uniform_real_distribution<float>(0.0f, 1.0f)(g_); }
  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(g_);
  }
  float normal() { return std::normal_distribution<float>(0.0f, 1.0f)(g_); }
  uint64_t next_u64() { return g_(); }

  // splitmix64-style stream derivation: independent child streams from a
  // parent seed plus a key.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  Rng fork(uint64_t key) { return Rng(mix(next_u64(), key)); }

 private:
  std::mt19937_64 g_;
};

void fill_normal(Tensor& t, Rng& rng, float stddev = 1.0f);

// Named trainable parameters of a model, in registration order.
class ParamStore {
 public:
  Var make(const std::string& name, std::vector<int> shape, Rng& rng,
           float stddev);
  Var make_zeros(const std::string& name, std::vector<int> shape);
  Var make_const(const std::string& name, std::vector<int> shape, float v);

  std::vector<Var>& params() { return params_; }
  const std::vector<Var>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  Var& at(const std::string& name);

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  void set_trainable(bool trainable) {
    for (auto& p : params_) p.set_requires_grad(trainable);
  }
  int64_t total_elements() const;

  // FNV-1a over the raw float bytes of all parameters; used by freeze checks.
  uint64_t content_hash() const;

 private:
  std::vector<Var> params_;
  std::vector<std::string> names_;
};

// Adam with optional learning-rate override per step.
class Adam {
 public:
  explicit Adam(std::vector<Var> params, float lr = 2e-4f, float beta1 = 0.9f,
                float beta2 = 0.999f, float eps = 1e-8f);
  void step();
  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  float lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Checkpoint container: named float32 tensors in a single binary file.
void save_tensors(const std::string& path,
                  const std::vector<std::string>& names,
                  const std::vector<Var>& params);
// Loads into existing params; shapes must match.
void load_tensors(const std::string& path,
                  const std::vector<std::string>& names,
                  std::vector<Var>& params);

}  // namespace lfdm

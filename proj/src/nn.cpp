#include "lfdm/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace lfdm {

void fill_normal(Tensor& t, Rng& rng, float stddev) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * stddev;
}

Var ParamStore::make(const std::string& name, std::vector<int> shape, Rng& rng,
                     float stddev) {
  Tensor t(std::move(shape));
  fill_normal(t, rng, stddev);
  Var v(std::move(t), true);
  params_.push_back(v);
  names_.push_back(name);
  return v;
}

Var ParamStore::make_zeros(const std::string& name, std::vector<int> shape) {
  Var v(Tensor(std::move(shape)), true);
  params_.push_back(v);
  names_.push_back(name);
  return v;
}

Var ParamStore::make_const(const std::string& name, std::vector<int> shape,
                           float val) {
  Var v(Tensor(std::move(shape), val), true);
  params_.push_back(v);
  names_.push_back(name);
  return v;
}

Var& ParamStore::at(const std::string& name) {
  for (size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return params_[i];
  throw std::runtime_error("parameter not found: " + name);
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

uint64_t ParamStore::content_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.val().data());
    const size_t nb = static_cast<size_t>(p.numel()) * sizeof(float);
    for (size_t i = 0; i < nb; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

Adam::Adam(std::vector<Var> params, float lr, float beta1, float beta2,
           float eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Var& p = params_[k];
    if (!p.requires_grad() || p.grad().empty()) continue;
    Tensor& val = p.val();
    const Tensor& g = p.grad();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (int64_t i = 0; i < val.numel(); ++i) {
      const float gi = g[i];
      m[i] = beta1_ * m[i] + (1.0f - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0f - beta2_) * gi * gi;
      const float mh = m[i] / bc1;
      const float vh = v[i] / bc2;
      val[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

namespace {
constexpr uint32_t kMagic = 0x4c46444dU;  // "LFDM"
constexpr uint32_t kVersion = 1;
}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::string>& names,
                  const std::vector<Var>& params) {
  check(names.size() == params.size(), "save_tensors: name/param mismatch");
  // Atomic write: temp file + rename.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    check(f.good(), "cannot open for write: " + tmp);
    auto w32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    w32(kMagic);
    w32(kVersion);
    w32(static_cast<uint32_t>(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& name = names[i];
      const auto& t = params[i].val();
      w32(static_cast<uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      w32(static_cast<uint32_t>(t.shape().size()));
      for (int d : t.shape()) w32(static_cast<uint32_t>(d));
      f.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    check(f.good(), "write failed: " + tmp);
  }
  check(std::rename(tmp.c_str(), path.c_str()) == 0,
        "rename failed: " + path);
}

void load_tensors(const std::string& path,
                  const std::vector<std::string>& names,
                  std::vector<Var>& params) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open checkpoint: " + path);
  auto r32 = [&]() {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  check(r32() == kMagic, "bad checkpoint magic: " + path);
  check(r32() == kVersion, "unsupported checkpoint version: " + path);
  const uint32_t count = r32();
  check(count == params.size(), "checkpoint tensor count mismatch: " + path);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t nlen = r32();
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    check(name == names[i], "checkpoint tensor name mismatch: " + name +
                                " vs " + names[i]);
    const uint32_t rank = r32();
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r32());
    check(shape == params[i].shape(),
          "checkpoint tensor shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(params[i].val().data()),
           static_cast<std::streamsize>(params[i].numel() * sizeof(float)));
  }
  check(f.good(), "truncated checkpoint: " + path);
}

}  // namespace lfdm

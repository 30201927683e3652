#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lfdm {

// Dense float32 tensor with row-major contiguous storage. Shapes follow
// the NCHW convention for images and NCKHW (batch, channel, time, height,
// width) for volumes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    v_.assign(static_cast<size_t>(numel_of(shape_)), 0.0f);
  }
  Tensor(std::vector<int> shape, float fill) : Tensor(std::move(shape)) {
    for (auto& x : v_) x = fill;
  }

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= d;
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  float* data() { return v_.data(); }
  const float* data() const { return v_.data(); }
  float& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  Tensor reshaped(std::vector<int> shape) const {
    if (numel_of(shape) != numel())
      throw std::invalid_argument("reshape changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  std::vector<int> shape_;
  std::vector<float> v_;
};

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error(msg);
}

}  // namespace lfdm

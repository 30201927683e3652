#pragma once

#include <string>
#include <vector>

#include "lfdm/tensor.hpp"

namespace lfdm {

// Frames are Tensor[3,H,W] with values in [0,1].

void write_png_rgb(const std::string& path, const Tensor& frame);
Tensor read_png_rgb(const std::string& path);

// Quantization used on disk; sampling determinism contracts compare the
// resulting bytes.
inline unsigned char to_byte(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<unsigned char>(c * 255.0f + 0.5f);
}

}  // namespace lfdm

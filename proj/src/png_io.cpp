#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "lfdm/image.hpp"

namespace lfdm {

void write_png_rgb(const std::string& path, const Tensor& frame) {
  check(frame.rank() == 3 && frame.dim(0) == 3, "write_png: frame must be [3,H,W]");
  const int h = frame.dim(1), w = frame.dim(2);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"),
                                           &std::fclose);
  check(fp != nullptr, "cannot open for write: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                            nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  check(png && info, "libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng write error: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<size_t>(x) * 3 + c] =
            to_byte(frame[c * plane + static_cast<int64_t>(y) * w + x]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png_rgb(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"),
                                           &std::fclose);
  check(fp != nullptr, "cannot open: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  check(png && info, "libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng read error: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  check(png_get_channels(png, info) == 3, "expected RGB png: " + path);
  Tensor frame({3, h, w});
  const int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        frame[c * plane + static_cast<int64_t>(y) * w + x] =
            static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.0f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return frame;
}

}  // namespace lfdm

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ae/tensor.hpp"

namespace ae {

// Decoded netpbm image. Pixel values are scaled to [0, 1] doubles and laid
// out channel-major, matching the tensor convention.
struct Image {
  int64_t height = 0, width = 0, channels = 0;  // channels: 1 or 3
  std::vector<double> pixels;                   // channels * height * width

  double at(int64_t c, int64_t y, int64_t x) const {
    return pixels[static_cast<size_t>((c * height + y) * width + x)];
  }
};

// Reads P2/P5 (graymap) and P3/P6 (pixmap) files, honoring comments and the
// stated maxval. Only 1-byte samples are supported (maxval <= 255).
Image read_netpbm(const std::string& path);
Image parse_netpbm(const std::string& bytes, const std::string& origin);

// Binary writers. write_pgm takes row-major gray samples already in 0..255;
// write_ppm takes channel-major (3, H, W) samples and interleaves on disk.
void write_pgm(const std::string& path, const std::vector<uint8_t>& gray, int64_t height,
               int64_t width, const std::string& header_comment = "");
void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb, int64_t height,
               int64_t width, const std::string& header_comment = "");

// (C, H, W) tensor with C in {1, 3}.
Tensor image_to_tensor(const Image& img);

}  // namespace ae

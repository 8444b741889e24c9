#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nff/tensor.hpp"

namespace nff::io {

/// 8-bit interleaved image, row-major from the top-left; 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

std::uint8_t quantize(double v);

/// [H, W], [H, W, C] or [1, H, W, C] tensors with values in [0, 1] (clamped).
template <typename T>
Image8 to_image(const Tensor<T>& t);
/// Back to [H, W, C] in [0, 1].
Tensor<double> to_tensor(const Image8& img);

std::string encode_png(const Image8& img);
void write_png(const std::string& path, const Image8& img);
/// Gray, gray+alpha, RGB, RGBA and palette inputs; alpha is dropped, 16-bit is reduced to 8.
Image8 read_png(const std::string& path);
Image8 decode_png(const std::string& bytes);

}  // namespace nff::io

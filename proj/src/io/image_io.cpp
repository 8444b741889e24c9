#include "nff/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace nff::io {

std::uint8_t quantize(double v) {
  if (!(v > 0)) return 0;
  if (v >= 1) return 255;
  return std::uint8_t(std::lround(v * 255.0));
}

template <typename T>
Image8 to_image(const Tensor<T>& t) {
  Shape s = t.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() == 2) s.push_back(1);
  if (s.size() != 3 || (s[2] != 1 && s[2] != 3)) {
    contract_fail("to_image", "cannot make an image from " + shape_str(t.shape()));
  }
  Image8 img{s[0], s[1], s[2], {}};
  img.pixels.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) img.pixels[i] = quantize(double(t[i]));
  return img;
}

Tensor<double> to_tensor(const Image8& img) {
  Tensor<double> t({img.height, img.width, img.channels});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

namespace {

png_image describe(const Image8& img) {
  if (img.height == 0 || img.width == 0 || (img.channels != 1 && img.channels != 3) ||
      img.pixels.size() != img.height * img.width * img.channels) {
    contract_fail("encode_png", "malformed image");
  }
  png_image p;
  std::memset(&p, 0, sizeof p);
  p.version = PNG_IMAGE_VERSION;
  p.width = png_uint_32(img.width);
  p.height = png_uint_32(img.height);
  p.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  return p;
}

}  // namespace

std::string encode_png(const Image8& img) {
  png_image p = describe(img);
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + p.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&p, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + p.message);
  }
  out.resize(size);
  return out;
}

void write_png(const std::string& path, const Image8& img) {
  const std::string bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw IoError("short write to '" + path + "'");
}

namespace {

Image8 finish_read(png_image& p, const std::string& what) {
  const bool gray = (p.format & PNG_FORMAT_FLAG_COLOR) == 0;
  p.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 img{p.height, p.width, gray ? 1u : 3u, {}};
  img.pixels.resize(PNG_IMAGE_SIZE(p));
  if (!png_image_finish_read(&p, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&p);
    throw IoError("cannot decode png " + what + ": " + p.message);
  }
  return img;
}

}  // namespace

Image8 read_png(const std::string& path) {
  png_image p;
  std::memset(&p, 0, sizeof p);
  p.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&p, path.c_str())) {
    throw IoError("cannot read png '" + path + "': " + p.message);
  }
  return finish_read(p, "'" + path + "'");
}

Image8 decode_png(const std::string& bytes) {
  png_image p;
  std::memset(&p, 0, sizeof p);
  p.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&p, bytes.data(), bytes.size())) {
    throw IoError(std::string("cannot read png from memory: ") + p.message);
  }
  return finish_read(p, "from memory");
}

template Image8 to_image<float>(const Tensor<float>&);
template Image8 to_image<double>(const Tensor<double>&);

}  // namespace nff::io

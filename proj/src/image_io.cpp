#include "ftseg/image_io.hpp"

#include "ftseg/io_util.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace ftseg {

Raster read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  Raster out(image.height, image.width);
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = float(buf[std::size_t(i)]);
  return out;
}

namespace {

std::uint8_t to_byte(float v) { return std::uint8_t(std::lround(std::clamp(v, 0.0f, 255.0f))); }

void write_png(const std::filesystem::path& path, std::uint32_t format, int width, int height,
               const std::vector<png_byte>& pixels) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.format = format;
  image.width = png_uint_32(width);
  image.height = png_uint_32(height);
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot encode PNG " + path.string() + ": " + image.message);
  std::vector<std::uint8_t> bytes(size);
  if (!png_image_write_to_memory(&image, bytes.data(), &size, 0, pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot encode PNG " + path.string() + ": " + image.message);
  bytes.resize(size);
  write_file_atomic(path, bytes);
}

}  // namespace

void write_png_gray(const std::filesystem::path& path, const Raster& img) {
  std::vector<png_byte> pixels(std::size_t(img.size()));
  for (Eigen::Index i = 0; i < img.size(); ++i) pixels[std::size_t(i)] = to_byte(img(i));
  write_png(path, PNG_FORMAT_GRAY, int(img.cols()), int(img.rows()), pixels);
}

void write_png_rgb(const std::filesystem::path& path, const Raster& r, const Raster& g, const Raster& b) {
  std::vector<png_byte> pixels(std::size_t(r.size()) * 3);
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    pixels[3 * std::size_t(i)] = to_byte(r(i));
    pixels[3 * std::size_t(i) + 1] = to_byte(g(i));
    pixels[3 * std::size_t(i) + 2] = to_byte(b(i));
  }
  write_png(path, PNG_FORMAT_RGB, int(r.cols()), int(r.rows()), pixels);
}

}  // namespace ftseg

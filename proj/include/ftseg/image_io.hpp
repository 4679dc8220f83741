#ifndef FTSEG_IMAGE_IO_HPP
#define FTSEG_IMAGE_IO_HPP

#include "ftseg/raster.hpp"

#include <filesystem>
#include <vector>

namespace ftseg {

/// Reads any PNG as 8-bit grayscale (colour inputs are converted).
Raster read_png_gray(const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG; values are rounded and clamped to [0, 255].
void write_png_gray(const std::filesystem::path& path, const Raster& image);

/// Writes an 8-bit RGB PNG from three equally sized planes.
void write_png_rgb(const std::filesystem::path& path, const Raster& r, const Raster& g, const Raster& b);

}  // namespace ftseg

#endif  // FTSEG_IMAGE_IO_HPP

#ifndef FTSEG_RASTER_HPP
#define FTSEG_RASTER_HPP

#include "ftseg/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>

namespace ftseg {

/// Single-channel image, rows = height. Intensities are kept as float.
using Raster = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Binary (or label) raster aligned with a Raster.
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace ftseg

#endif  // FTSEG_RASTER_HPP

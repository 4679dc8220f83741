#ifndef FTSEG_DATA_PIPELINE_HPP
#define FTSEG_DATA_PIPELINE_HPP

#include "ftseg/raster.hpp"
#include "ftseg/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ftseg {

enum class SplitTag { Unassigned, Train, Test };

struct Sample {
  std::string id;
  Raster image;  // grayscale intensities in [0, 255]
  Mask mask;     // binary, same size as image
  SplitTag split = SplitTag::Unassigned;
};

/// Dataset directory or contents violate the expected layout.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitConfig {
  int total = 999;
  int train_count = 799;
  int test_count = 200;
  std::uint64_t seed = 42;

  void validate() const;
};

enum class Normalization { UnitRange, ImageNetStats };
std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

struct AugmentationConfig {
  double max_rotation_degrees = 25.0;  // angles drawn from [-max, +max]
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  Normalization normalization = Normalization::UnitRange;

  void validate() const;
};

/// One realised augmentation.
struct AugmentDraw {
  double angle_degrees = 0.0;
  bool hflip = false;
  bool vflip = false;
};

// --- HC18 ingestion ---------------------------------------------------------

/// Pairs `<root>/training_set/<id>.png` with `<id>_Annotation.png`. Returned
/// samples carry the raw contour raster in `mask`, sorted by id.
std::vector<Sample> load_hc18(const std::filesystem::path& root);

/// load_hc18 followed by fill_annotation_with_retry on every sample.
std::vector<Sample> load_dataset(const std::filesystem::path& root);

/// Fills a closed 1-pixel contour: everything not reachable from the border
/// through background pixels (4-connectivity) becomes foreground.
/// An already filled region comes back unchanged. Throws DataError if a thin
/// contour encloses nothing (open or empty).
Mask fill_annotation(const Mask& contour);

/// fill_annotation, retrying once on a 3x3-dilated contour if the first attempt leaks.
Mask fill_annotation_with_retry(const Mask& contour);

/// Mask pixels with a 4-neighbour outside the mask (or on the raster edge).
Mask mask_outline(const Mask& mask);

/// Persists samples in the HC18 layout (image + outline annotation).
void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& root);

// --- splitting, geometry, normalisation -------------------------------------

/// Seeded shuffle of the id-sorted samples; first train_count go to Train.
std::pair<std::vector<Sample>, std::vector<Sample>> split(std::vector<Sample> samples, const SplitConfig& cfg);

Raster resize_bilinear(const Raster& img, int height, int width);
Mask resize_nearest(const Mask& mask, int height, int width);

/// Bilinear image / nearest-neighbour mask resize to target x target.
Sample resize(const Sample& sample, int target);

/// Deterministic generator keyed by (seed, sample id, epoch).
std::mt19937_64 keyed_rng(std::uint64_t seed, const std::string& id, std::uint64_t epoch);

AugmentDraw draw_augmentation(const AugmentationConfig& cfg, std::mt19937_64& rng);

/// Rotation about the image centre, then optional horizontal and vertical
/// flips. Image: bilinear with zero fill; mask: nearest neighbour with zero fill.
Sample augment(const Sample& sample, const AugmentDraw& draw);
Sample augment(const Sample& sample, const AugmentationConfig& cfg, std::mt19937_64& rng);

Raster rotate_bilinear(const Raster& img, double angle_degrees);
Mask rotate_nearest(const Mask& mask, double angle_degrees);

inline constexpr std::array<double, 3> kImageNetMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageNetStd = {0.229, 0.224, 0.225};

/// Scales to [0, 1] and replicates to three channels; ImageNetStats then
/// standardises each channel. Throws DataError on values outside [0, 255].
std::array<Raster, 3> normalize(const Raster& image, Normalization mode);

/// Stacks samples into an (N x 3 x H x W) input and an (N x 1 x H x W) target.
template <typename Scalar>
std::pair<Tensor<Scalar>, Tensor<Scalar>> make_batch(std::span<const Sample> samples, Normalization mode) {
  if (samples.empty()) throw DataError("make_batch: empty batch");
  const int h = int(samples[0].image.rows()), w = int(samples[0].image.cols());
  Tensor<Scalar> x(int(samples.size()), 3, h, w), y(int(samples.size()), 1, h, w);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& s = samples[n];
    if (s.image.rows() != h || s.image.cols() != w || s.mask.rows() != h || s.mask.cols() != w)
      throw ShapeError("make_batch: sample " + s.id + " differs in size");
    const auto channels = normalize(s.image, mode);
    auto xp = x.plane(int(n));
    for (int c = 0; c < 3; ++c)
      xp.row(c) = Eigen::Map<const Eigen::Matrix<float, 1, Eigen::Dynamic>>(channels[std::size_t(c)].data(), h * w)
                      .template cast<Scalar>();
    y.plane(int(n)).row(0) =
        Eigen::Map<const Eigen::Matrix<std::uint8_t, 1, Eigen::Dynamic>>(s.mask.data(), h * w).template cast<Scalar>();
  }
  return {std::move(x), std::move(y)};
}

// --- synthetic phantoms -----------------------------------------------------

/// Speckled background with one randomly posed filled ellipse (semi-axes
/// 15-40% of the size) and a bright rim; the mask is the filled ellipse.
std::vector<Sample> synthesize_phantoms(int n, std::uint64_t seed, int size);

}  // namespace ftseg

#endif  // FTSEG_DATA_PIPELINE_HPP

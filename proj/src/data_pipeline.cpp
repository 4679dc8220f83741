#include "ftseg/data_pipeline.hpp"

#include "ftseg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <set>

namespace ftseg {

namespace fs = std::filesystem;

void SplitConfig::validate() const {
  if (total < 1 || train_count < 0 || test_count < 0)
    throw DataError("split: counts must be non-negative and total positive");
  if (train_count + test_count != total)
    throw DataError("split: train_count + test_count = " + std::to_string(train_count + test_count) +
                    " does not equal total " + std::to_string(total));
}

std::string to_string(Normalization n) { return n == Normalization::UnitRange ? "unit_range" : "imagenet_stats"; }

Normalization parse_normalization(const std::string& s) {
  if (s == "unit_range") return Normalization::UnitRange;
  if (s == "imagenet_stats") return Normalization::ImageNetStats;
  throw DataError("unknown normalization '" + s + "'");
}

void AugmentationConfig::validate() const {
  if (max_rotation_degrees < 0 || max_rotation_degrees > 180) throw DataError("rotation range must lie in [0, 180]");
  if (hflip_prob < 0 || hflip_prob > 1 || vflip_prob < 0 || vflip_prob > 1)
    throw DataError("flip probabilities must lie in [0, 1]");
}

// --- HC18 ingestion ---------------------------------------------------------

std::vector<Sample> load_hc18(const fs::path& root) {
  const fs::path dir = root / "training_set";
  if (!fs::is_directory(dir)) throw DataError("no training_set directory under " + root.string());
  std::set<std::string> images, annotations;
  const std::string suffix = "_Annotation";
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.size() > suffix.size() && stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
      annotations.insert(stem.substr(0, stem.size() - suffix.size()));
    else
      images.insert(stem);
  }
  if (images.empty()) throw DataError("no images found in " + dir.string());
  std::vector<std::string> orphans;
  for (const auto& id : images)
    if (!annotations.count(id)) orphans.push_back(id);
  if (!orphans.empty()) {
    std::string list;
    for (const auto& id : orphans) list += (list.empty() ? "" : ", ") + id;
    throw DataError("images without annotation: " + list);
  }
  std::vector<Sample> samples;
  for (const auto& id : images) {
    Sample s;
    s.id = id;
    s.image = read_png_gray(dir / (id + ".png"));
    const Raster ann = read_png_gray(dir / (id + suffix + ".png"));
    if (ann.rows() != s.image.rows() || ann.cols() != s.image.cols())
      throw DataError("annotation size differs from image for " + id);
    s.mask = (ann > 127.0f).cast<std::uint8_t>();
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<Sample> load_dataset(const fs::path& root) {
  auto samples = load_hc18(root);
  for (auto& s : samples) {
    try {
      s.mask = fill_annotation_with_retry(s.mask);
    } catch (const DataError& e) {
      throw DataError(s.id + ": " + e.what());
    }
  }
  return samples;
}

namespace {

// Exterior flood fill from the border; everything unreached is inside.
// `solid_ok` accepts input that is already a filled region (nothing enclosed
// beyond itself, but it is more than a thin outline).
Mask fill_impl(const Mask& contour, bool solid_ok) {
  const Eigen::Index h = contour.rows(), w = contour.cols();
  Mask outside = Mask::Zero(h, w);
  std::queue<std::pair<Eigen::Index, Eigen::Index>> frontier;
  auto seed = [&](Eigen::Index y, Eigen::Index x) {
    if (!contour(y, x) && !outside(y, x)) {
      outside(y, x) = 1;
      frontier.emplace(y, x);
    }
  };
  for (Eigen::Index x = 0; x < w; ++x) seed(0, x), seed(h - 1, x);
  for (Eigen::Index y = 0; y < h; ++y) seed(y, 0), seed(y, w - 1);
  while (!frontier.empty()) {
    auto [y, x] = frontier.front();
    frontier.pop();
    if (y > 0) seed(y - 1, x);
    if (y + 1 < h) seed(y + 1, x);
    if (x > 0) seed(y, x - 1);
    if (x + 1 < w) seed(y, x + 1);
  }
  Mask filled = 1 - outside;
  const Mask binary = (contour > 0).cast<std::uint8_t>();
  const auto interior = (filled.cast<int>() - binary.cast<int>()).sum();
  if (interior > 0) return filled;
  if (solid_ok && binary.any() && !(mask_outline(binary) == binary).all()) return filled;
  throw DataError("annotation contour does not enclose a region");
}

}  // namespace

Mask fill_annotation(const Mask& contour) { return fill_impl(contour, true); }

Mask fill_annotation_with_retry(const Mask& contour) {
  try {
    return fill_annotation(contour);
  } catch (const DataError&) {
    Mask dilated = Mask::Zero(contour.rows(), contour.cols());
    for (Eigen::Index y = 0; y < contour.rows(); ++y)
      for (Eigen::Index x = 0; x < contour.cols(); ++x) {
        if (!contour(y, x)) continue;
        for (Eigen::Index dy = -1; dy <= 1; ++dy)
          for (Eigen::Index dx = -1; dx <= 1; ++dx) {
            const auto yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < contour.rows() && xx >= 0 && xx < contour.cols()) dilated(yy, xx) = 1;
          }
      }
    // A dilated open curve is thick, so it must enclose something genuinely new.
    return fill_impl(dilated, false);
  }
}

Mask mask_outline(const Mask& mask) {
  const Eigen::Index h = mask.rows(), w = mask.cols();
  Mask out = Mask::Zero(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == h - 1 || x == w - 1 || !mask(y - 1, x) || !mask(y + 1, x) ||
                        !mask(y, x - 1) || !mask(y, x + 1);
      out(y, x) = edge ? 1 : 0;
    }
  return out;
}

void save_dataset(const std::vector<Sample>& samples, const fs::path& root) {
  const fs::path dir = root / "training_set";
  fs::create_directories(dir);
  for (const auto& s : samples) {
    write_png_gray(dir / (s.id + ".png"), s.image);
    write_png_gray(dir / (s.id + "_Annotation.png"), mask_outline(s.mask).cast<float>() * 255.0f);
  }
}

// --- splitting, geometry, normalisation -------------------------------------

std::pair<std::vector<Sample>, std::vector<Sample>> split(std::vector<Sample> samples, const SplitConfig& cfg) {
  cfg.validate();
  if (int(samples.size()) != cfg.total)
    throw DataError("split: expected " + std::to_string(cfg.total) + " samples, got " + std::to_string(samples.size()));
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.id < b.id; });
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(samples.begin(), samples.end(), rng);
  std::vector<Sample> train, test;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& s = samples[i];
    if (int(i) < cfg.train_count) {
      s.split = SplitTag::Train;
      train.push_back(std::move(s));
    } else {
      s.split = SplitTag::Test;
      test.push_back(std::move(s));
    }
  }
  return {std::move(train), std::move(test)};
}

namespace {

// Half-pixel-centre source coordinate for an output index.
double source_coord(Eigen::Index dst, double scale) { return (double(dst) + 0.5) * scale - 0.5; }

float bilinear_zero(const Raster& img, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const auto y0 = Eigen::Index(fy), x0 = Eigen::Index(fx);
  const double wy = y - fy, wx = x - fx;
  double acc = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const auto yy = y0 + dy, xx = x0 + dx;
      if (yy < 0 || xx < 0 || yy >= img.rows() || xx >= img.cols()) continue;
      const double wgt = (dy ? wy : 1 - wy) * (dx ? wx : 1 - wx);
      if (wgt != 0) acc += wgt * img(yy, xx);
    }
  return float(acc);
}

}  // namespace

Raster resize_bilinear(const Raster& img, int height, int width) {
  if (img.rows() == height && img.cols() == width) return img;
  Raster out(height, width);
  const double sy = double(img.rows()) / height, sx = double(img.cols()) / width;
  for (Eigen::Index y = 0; y < height; ++y) {
    const double src_y = std::clamp(source_coord(y, sy), 0.0, double(img.rows() - 1));
    const auto y0 = Eigen::Index(src_y);
    const auto y1 = std::min(y0 + 1, img.rows() - 1);
    const double wy = src_y - double(y0);
    for (Eigen::Index x = 0; x < width; ++x) {
      const double src_x = std::clamp(source_coord(x, sx), 0.0, double(img.cols() - 1));
      const auto x0 = Eigen::Index(src_x);
      const auto x1 = std::min(x0 + 1, img.cols() - 1);
      const double wx = src_x - double(x0);
      out(y, x) = float((1 - wy) * ((1 - wx) * img(y0, x0) + wx * img(y0, x1)) +
                        wy * ((1 - wx) * img(y1, x0) + wx * img(y1, x1)));
    }
  }
  return out;
}

Mask resize_nearest(const Mask& mask, int height, int width) {
  if (mask.rows() == height && mask.cols() == width) return mask;
  Mask out(height, width);
  const double sy = double(mask.rows()) / height, sx = double(mask.cols()) / width;
  for (Eigen::Index y = 0; y < height; ++y) {
    const auto src_y = std::min(Eigen::Index((double(y) + 0.5) * sy), mask.rows() - 1);
    for (Eigen::Index x = 0; x < width; ++x) {
      const auto src_x = std::min(Eigen::Index((double(x) + 0.5) * sx), mask.cols() - 1);
      out(y, x) = mask(src_y, src_x);
    }
  }
  return out;
}

Sample resize(const Sample& sample, int target) {
  if (target <= 0 || target % 32) throw DataError("resize target must be a positive multiple of 32");
  Sample out;
  out.id = sample.id;
  out.split = sample.split;
  out.image = resize_bilinear(sample.image, target, target);
  out.mask = resize_nearest(sample.mask, target, target);
  return out;
}

std::mt19937_64 keyed_rng(std::uint64_t seed, const std::string& id, std::uint64_t epoch) {
  // FNV-1a keeps the id hash stable across standard libraries.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(h), std::uint32_t(h >> 32),
                    std::uint32_t(epoch), std::uint32_t(epoch >> 32)};
  return std::mt19937_64(seq);
}

AugmentDraw draw_augmentation(const AugmentationConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(-cfg.max_rotation_degrees, cfg.max_rotation_degrees);
  std::bernoulli_distribution h(cfg.hflip_prob), v(cfg.vflip_prob);
  AugmentDraw d;
  d.angle_degrees = angle(rng);
  d.hflip = h(rng);
  d.vflip = v(rng);
  return d;
}

namespace {

// Inverse-maps output pixel (y, x) through a rotation about the centre.
template <typename Sampler>
void rotate_into(Eigen::Index h, Eigen::Index w, double angle_degrees, Sampler&& sample) {
  const double a = angle_degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double cy = (double(h) - 1) / 2, cx = (double(w) - 1) / 2;
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) {
      const double dy = double(y) - cy, dx = double(x) - cx;
      sample(y, x, cy + s * dx + c * dy, cx + c * dx - s * dy);
    }
}

}  // namespace

Raster rotate_bilinear(const Raster& img, double angle_degrees) {
  if (angle_degrees == 0.0) return img;
  Raster out(img.rows(), img.cols());
  rotate_into(img.rows(), img.cols(), angle_degrees,
              [&](Eigen::Index y, Eigen::Index x, double sy, double sx) { out(y, x) = bilinear_zero(img, sy, sx); });
  return out;
}

Mask rotate_nearest(const Mask& mask, double angle_degrees) {
  if (angle_degrees == 0.0) return mask;
  Mask out(mask.rows(), mask.cols());
  rotate_into(mask.rows(), mask.cols(), angle_degrees, [&](Eigen::Index y, Eigen::Index x, double sy, double sx) {
    const auto yy = Eigen::Index(std::lround(sy)), xx = Eigen::Index(std::lround(sx));
    out(y, x) = (yy >= 0 && xx >= 0 && yy < mask.rows() && xx < mask.cols()) ? mask(yy, xx) : 0;
  });
  return out;
}

Sample augment(const Sample& sample, const AugmentDraw& draw) {
  Sample out;
  out.id = sample.id;
  out.split = sample.split;
  out.image = rotate_bilinear(sample.image, draw.angle_degrees);
  out.mask = rotate_nearest(sample.mask, draw.angle_degrees);
  if (draw.hflip) {
    out.image = out.image.rowwise().reverse().eval();
    out.mask = out.mask.rowwise().reverse().eval();
  }
  if (draw.vflip) {
    out.image = out.image.colwise().reverse().eval();
    out.mask = out.mask.colwise().reverse().eval();
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentationConfig& cfg, std::mt19937_64& rng) {
  return augment(sample, draw_augmentation(cfg, rng));
}

std::array<Raster, 3> normalize(const Raster& image, Normalization mode) {
  if ((image < 0.0f).any() || (image > 255.0f).any()) throw DataError("normalize: pixel values must lie in [0, 255]");
  const Raster unit = image / 255.0f;
  std::array<Raster, 3> out;
  for (std::size_t c = 0; c < 3; ++c) {
    if (mode == Normalization::UnitRange)
      out[c] = unit;
    else
      out[c] = (unit - float(kImageNetMean[c])) / float(kImageNetStd[c]);
  }
  return out;
}

// --- synthetic phantoms -----------------------------------------------------

std::vector<Sample> synthesize_phantoms(int n, std::uint64_t seed, int size) {
  if (n < 1) throw DataError("synthesize_phantoms: n must be >= 1");
  if (size <= 0 || size % 32) throw DataError("synthesize_phantoms: size must be a positive multiple of 32");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(std::size_t(n));
  const int digits = int(std::to_string(n - 1).size());
  for (int i = 0; i < n; ++i) {
    const double a = size * (0.15 + 0.25 * unit(rng));  // semi-axes
    const double b = size * (0.15 + 0.25 * unit(rng));
    const double theta = std::numbers::pi * unit(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    // half-extents of the rotated ellipse's bounding box
    const double ex = std::sqrt(a * a * ct * ct + b * b * st * st);
    const double ey = std::sqrt(a * a * st * st + b * b * ct * ct);
    const double margin = 2.0;
    const double cx = ex + margin + (size - 2 * (ex + margin)) * unit(rng);
    const double cy = ey + margin + (size - 2 * (ey + margin)) * unit(rng);
    const double background = 30 + 30 * unit(rng);
    const double interior = background + 15 + 25 * unit(rng);
    const double rim = 170 + 60 * unit(rng);
    const double rim_width = 0.08 + 0.06 * unit(rng);

    Sample s;
    std::string id = std::to_string(i);
    s.id = "phantom_" + std::string(std::size_t(digits) - id.size(), '0') + id;
    s.image.resize(size, size);
    s.mask.resize(size, size);
    std::exponential_distribution<double> speckle(1.0);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
        const double r = std::sqrt(u * u + v * v);  // 1 on the ellipse boundary
        const bool inside = r <= 1.0;
        double mean = inside ? interior : background;
        if (std::abs(r - 1.0) < rim_width) mean = rim;
        // multiplicative speckle, softened so the structure stays visible
        const double value = mean * (0.6 + 0.4 * speckle(rng));
        s.image(y, x) = float(std::round(std::clamp(value, 0.0, 255.0)));
        s.mask(y, x) = inside ? 1 : 0;
      }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ftseg

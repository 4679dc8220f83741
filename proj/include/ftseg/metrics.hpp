#ifndef FTSEG_METRICS_HPP
#define FTSEG_METRICS_HPP

#include "ftseg/raster.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <string>

namespace ftseg {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp, fp += o.fp, fn += o.fn, tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Pixel-wise counts between a binary prediction and ground truth.
ConfusionCounts confusion(const Mask& pred, const Mask& gt);

double pixel_accuracy(const ConfusionCounts& c);
/// 2tp / (2tp + fp + fn); 1 when both masks are empty.
double dice(const ConfusionCounts& c);
/// Per-class IoU for K = 2: {background, foreground}; an absent class scores 1.
std::map<int, double> per_class_iou(const ConfusionCounts& c);
double miou(const ConfusionCounts& c);

enum class Averaging { Micro, Macro };
std::string to_string(Averaging a);
Averaging parse_averaging(const std::string& s);

struct MetricReport {
  double pixel_accuracy = 0, dice = 0, miou = 0;
  std::map<int, double> per_class_iou;
  std::int64_t n_images = 0;
  Averaging averaging = Averaging::Micro;
  ConfusionCounts counts;  // pooled over all images

  static MetricReport from_counts(const ConfusionCounts& c, std::int64_t n_images);
};

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);

/// Thresholds sigmoid(logit) > threshold.
Mask binarize_logits(const Raster& logits, double threshold);

/// Accumulates per-image counts under either averaging mode. Micro pools
/// counts first; macro averages each metric over images.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(Averaging mode = Averaging::Micro) : mode_(mode) {}
  void add(const ConfusionCounts& c);
  MetricReport report() const;
  std::int64_t images() const { return n_; }

 private:
  Averaging mode_;
  ConfusionCounts pooled_;
  double sum_pa_ = 0, sum_dice_ = 0, sum_bg_ = 0, sum_fg_ = 0;
  std::int64_t n_ = 0;
};

}  // namespace ftseg

#endif  // FTSEG_METRICS_HPP

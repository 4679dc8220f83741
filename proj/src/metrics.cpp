#include "ftseg/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace ftseg {

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw ShapeError("confusion: prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     " vs ground truth " + std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()));
  if ((pred > 1).any() || (gt > 1).any()) throw std::invalid_argument("confusion: masks must be binary");
  ConfusionCounts c;
  const auto p = pred.cast<std::int64_t>();
  const auto g = gt.cast<std::int64_t>();
  c.tp = (p * g).sum();
  c.fp = (p * (1 - g)).sum();
  c.fn = ((1 - p) * g).sum();
  c.tn = pred.size() - c.tp - c.fp - c.fn;
  return c;
}

double pixel_accuracy(const ConfusionCounts& c) {
  if (c.total() <= 0) throw std::invalid_argument("pixel_accuracy: no pixels");
  return double(c.tp + c.tn) / double(c.total());
}

double dice(const ConfusionCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : double(2 * c.tp) / double(denom);
}

std::map<int, double> per_class_iou(const ConfusionCounts& c) {
  auto iou = [](std::int64_t hit, std::int64_t union_) { return union_ == 0 ? 1.0 : double(hit) / double(union_); };
  return {{0, iou(c.tn, c.tn + c.fp + c.fn)}, {1, iou(c.tp, c.tp + c.fp + c.fn)}};
}

double miou(const ConfusionCounts& c) {
  // (a/b + d/e) / 2 as one fraction, so the result is a single correctly
  // rounded quotient whenever both integers are exactly representable.
  const std::int64_t u0 = c.tn + c.fp + c.fn, u1 = c.tp + c.fp + c.fn;
  const __int128 a = u0 ? c.tn : 1, b = u0 ? u0 : 1, d = u1 ? c.tp : 1, e = u1 ? u1 : 1;
  const __int128 num = a * e + d * b, den = 2 * b * e;
  constexpr __int128 exact = __int128(1) << 53;
  if (num <= exact && den <= exact) return double(num) / double(den);
  const auto ious = per_class_iou(c);
  return (ious.at(0) + ious.at(1)) / 2.0;
}

std::string to_string(Averaging a) { return a == Averaging::Micro ? "micro" : "macro"; }

Averaging parse_averaging(const std::string& s) {
  if (s == "micro") return Averaging::Micro;
  if (s == "macro") return Averaging::Macro;
  throw std::invalid_argument("unknown averaging mode '" + s + "'");
}

MetricReport MetricReport::from_counts(const ConfusionCounts& c, std::int64_t n_images) {
  MetricReport r;
  r.pixel_accuracy = ftseg::pixel_accuracy(c);
  r.dice = ftseg::dice(c);
  r.per_class_iou = ftseg::per_class_iou(c);
  r.miou = ftseg::miou(c);
  r.n_images = n_images;
  r.counts = c;
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json iou = nlohmann::json::object();
  for (const auto& [k, v] : r.per_class_iou) iou[std::to_string(k)] = v;
  return {{"pa", r.pixel_accuracy},
          {"dice", r.dice},
          {"miou", r.miou},
          {"per_class_iou", iou},
          {"n_images", r.n_images},
          {"averaging", to_string(r.averaging)},
          {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}}};
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.pixel_accuracy = j.at("pa").get<double>();
  r.dice = j.at("dice").get<double>();
  r.miou = j.at("miou").get<double>();
  for (const auto& [k, v] : j.at("per_class_iou").items()) r.per_class_iou[std::stoi(k)] = v.get<double>();
  r.n_images = j.at("n_images").get<std::int64_t>();
  r.averaging = parse_averaging(j.at("averaging").get<std::string>());
  if (j.contains("counts")) {
    const auto& c = j["counts"];
    r.counts = {c.at("tp").get<std::int64_t>(), c.at("fp").get<std::int64_t>(), c.at("fn").get<std::int64_t>(),
                c.at("tn").get<std::int64_t>()};
  }
  return r;
}

Mask binarize_logits(const Raster& logits, double threshold) {
  Mask m(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-double(logits(i))));
    m(i) = p > threshold ? 1 : 0;
  }
  return m;
}

void MetricAccumulator::add(const ConfusionCounts& c) {
  pooled_ += c;
  sum_pa_ += pixel_accuracy(c);
  sum_dice_ += dice(c);
  const auto iou = per_class_iou(c);
  sum_bg_ += iou.at(0);
  sum_fg_ += iou.at(1);
  ++n_;
}

MetricReport MetricAccumulator::report() const {
  if (n_ == 0) throw std::invalid_argument("metrics: no images evaluated");
  MetricReport r = MetricReport::from_counts(pooled_, n_);
  r.averaging = mode_;
  if (mode_ == Averaging::Macro) {
    r.pixel_accuracy = sum_pa_ / double(n_);
    r.dice = sum_dice_ / double(n_);
    r.per_class_iou = {{0, sum_bg_ / double(n_)}, {1, sum_fg_ / double(n_)}};
    r.miou = 0.5 * (r.per_class_iou[0] + r.per_class_iou[1]);
  }
  return r;
}

}  // namespace ftseg

#ifndef FTSEG_FREEZE_POLICY_HPP
#define FTSEG_FREEZE_POLICY_HPP

#include "ftseg/network.hpp"
#include "ftseg/parameter.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftseg {

enum class FineTuneStrategy {
  BaselineScratch,
  DecoderAll,
  EncoderAll,
  Decoder0,
  Decoder01,
  Decoder012,
  Decoder234,
  Decoder4,
};

inline constexpr std::array<FineTuneStrategy, 8> kAllStrategies = {
    FineTuneStrategy::BaselineScratch, FineTuneStrategy::DecoderAll, FineTuneStrategy::EncoderAll,
    FineTuneStrategy::Decoder0,        FineTuneStrategy::Decoder01,  FineTuneStrategy::Decoder012,
    FineTuneStrategy::Decoder234,      FineTuneStrategy::Decoder4,
};

/// Config-file spelling, e.g. "decoder_0_1_2".
std::string to_string(FineTuneStrategy s);
FineTuneStrategy parse_strategy(const std::string& name);
int ordinal(FineTuneStrategy s);
bool requires_pretrained_encoder(FineTuneStrategy s);

/// Decoder block indices unfrozen by a DecoderK strategy (empty otherwise).
std::vector<int> unfrozen_decoder_blocks(FineTuneStrategy s);

/// Strategy/architecture or strategy/weights mismatch.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainabilityMask {
 public:
  TrainabilityMask() = default;
  explicit TrainabilityMask(std::map<LayerGroupId, bool> entries);

  bool trainable(const LayerGroupId& g) const;
  const std::map<LayerGroupId, bool>& entries() const { return entries_; }
  bool operator==(const TrainabilityMask&) const = default;

 private:
  std::map<LayerGroupId, bool> entries_;
};

/// Maps a strategy onto the given group listing. The head is trainable under
/// every strategy; the bottleneck (baseline only) follows the encoder.
TrainabilityMask trainable_mask(FineTuneStrategy strategy, const std::vector<LayerGroupId>& groups);

/// Throws ConfigError when the strategy cannot apply to a network of this shape.
void check_compatible(FineTuneStrategy strategy, const std::vector<LayerGroupId>& groups);

struct ApplyOptions {
  /// Permits pretrained-encoder strategies on a randomly initialised encoder
  /// (the random-weights ablation).
  bool allow_random_encoder = false;
};

/// Sets every parameter's trainable flag from the strategy's mask. Values are untouched.
template <typename Scalar>
TrainabilityMask apply(SegmentationNetwork<Scalar>& net, FineTuneStrategy strategy, ApplyOptions options = {}) {
  if (requires_pretrained_encoder(strategy) && !net.spec().encoder_pretrained && !options.allow_random_encoder)
    throw ConfigError("strategy " + to_string(strategy) +
                      " expects a pretrained encoder; set allow_random_encoder for the random-weights ablation");
  auto mask = trainable_mask(strategy, layer_group_ids(net));
  for (auto& p : net.parameters()) p.trainable = mask.trainable(p.group);
  return mask;
}

struct FreezeSummary {
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;
  double reduction_vs_baseline = 0.0;  // percent, rounded to 0.1
};

/// Trainable/frozen tally for `net` as currently flagged, with the reduction
/// relative to `baseline_total` (the all-trainable baseline U-Net count).
template <typename Scalar>
FreezeSummary summarize(const SegmentationNetwork<Scalar>& net, std::int64_t baseline_total);

double reduction_percent(std::int64_t trainable, std::int64_t baseline_total);

/// Parameter count of the default all-trainable baseline U-Net.
std::int64_t default_baseline_total();

template <typename Scalar>
FreezeSummary summarize(const SegmentationNetwork<Scalar>& net, std::int64_t baseline_total) {
  FreezeSummary s;
  s.trainable = count_parameters(net, CountFilter::TrainableOnly).total;
  s.frozen = count_parameters(net, CountFilter::All).total - s.trainable;
  s.reduction_vs_baseline = reduction_percent(s.trainable, baseline_total);
  return s;
}

}  // namespace ftseg

#endif  // FTSEG_FREEZE_POLICY_HPP

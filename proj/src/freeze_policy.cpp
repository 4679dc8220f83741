#include "ftseg/freeze_policy.hpp"

#include <algorithm>
#include <cmath>

namespace ftseg {

namespace {

struct StrategyInfo {
  FineTuneStrategy id;
  const char* name;
  std::vector<int> decoder_blocks;
};

const std::vector<StrategyInfo>& strategy_table() {
  static const std::vector<StrategyInfo> table = {
      {FineTuneStrategy::BaselineScratch, "baseline_scratch", {}},
      {FineTuneStrategy::DecoderAll, "decoder_all", {}},
      {FineTuneStrategy::EncoderAll, "encoder_all", {}},
      {FineTuneStrategy::Decoder0, "decoder_0", {0}},
      {FineTuneStrategy::Decoder01, "decoder_0_1", {0, 1}},
      {FineTuneStrategy::Decoder012, "decoder_0_1_2", {0, 1, 2}},
      {FineTuneStrategy::Decoder234, "decoder_2_3_4", {2, 3, 4}},
      {FineTuneStrategy::Decoder4, "decoder_4", {4}},
  };
  return table;
}

const StrategyInfo& info(FineTuneStrategy s) { return strategy_table()[std::size_t(s)]; }

}  // namespace

std::string to_string(FineTuneStrategy s) { return info(s).name; }

FineTuneStrategy parse_strategy(const std::string& name) {
  for (const auto& e : strategy_table())
    if (name == e.name) return e.id;
  throw ConfigError("unknown fine-tuning strategy '" + name + "'");
}

int ordinal(FineTuneStrategy s) { return int(s); }

bool requires_pretrained_encoder(FineTuneStrategy s) { return s != FineTuneStrategy::BaselineScratch; }

std::vector<int> unfrozen_decoder_blocks(FineTuneStrategy s) { return info(s).decoder_blocks; }

TrainabilityMask::TrainabilityMask(std::map<LayerGroupId, bool> entries) : entries_(std::move(entries)) {
  if (std::none_of(entries_.begin(), entries_.end(), [](const auto& e) { return e.second; }))
    throw ConfigError("trainability mask freezes every group");
}

bool TrainabilityMask::trainable(const LayerGroupId& g) const {
  auto it = entries_.find(g);
  if (it == entries_.end()) throw ConfigError("trainability mask has no entry for group " + to_string(g));
  return it->second;
}

void check_compatible(FineTuneStrategy strategy, const std::vector<LayerGroupId>& groups) {
  const std::set<LayerGroupId> present(groups.begin(), groups.end());
  for (int d : unfrozen_decoder_blocks(strategy))
    if (!present.count(LayerGroupId::decoder(d)))
      throw ConfigError("strategy " + to_string(strategy) + " unfreezes decoder block " + std::to_string(d) +
                        ", which this network does not have");
  if (!present.count(LayerGroupId::head())) throw ConfigError("network has no head group");
}

TrainabilityMask trainable_mask(FineTuneStrategy strategy, const std::vector<LayerGroupId>& groups) {
  check_compatible(strategy, groups);
  const auto blocks = unfrozen_decoder_blocks(strategy);
  std::map<LayerGroupId, bool> entries;
  for (const auto& g : groups) {
    bool on = false;
    switch (strategy) {
      case FineTuneStrategy::BaselineScratch:
        on = true;
        break;
      case FineTuneStrategy::DecoderAll:
        on = g.kind == GroupKind::DecoderBlock || g.kind == GroupKind::Head;
        break;
      case FineTuneStrategy::EncoderAll:
        on = g.kind != GroupKind::DecoderBlock;
        break;
      default:
        on = g.kind == GroupKind::Head ||
             (g.kind == GroupKind::DecoderBlock && std::find(blocks.begin(), blocks.end(), g.index) != blocks.end());
        break;
    }
    entries[g] = on;
  }
  return TrainabilityMask(std::move(entries));
}

double reduction_percent(std::int64_t trainable, std::int64_t baseline_total) {
  if (baseline_total <= 0) throw ConfigError("baseline parameter total must be positive");
  const double pct = 100.0 * (1.0 - double(trainable) / double(baseline_total));
  return std::round(pct * 10.0) / 10.0;
}

std::int64_t default_baseline_total() {
  static const std::int64_t total =
      count_parameters(build_baseline_unet<float>(SegmentationModelSpec::baseline()), CountFilter::All).total;
  return total;
}

}  // namespace ftseg

#ifndef FTSEG_WEIGHT_CONVERT_HPP
#define FTSEG_WEIGHT_CONVERT_HPP

#include "ftseg/weight_archive.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ftseg {

/// Maps a torchvision MobileNetV2 state-dict key (`features.<i>...`, optionally
/// prefixed `encoder.` as segmentation libraries store it) onto the canonical
/// `encoder.<stage>.<block>.<part>.<tensor>` name. Returns nullopt for keys that
/// carry no encoder state (classifier, num_batches_tracked).
std::optional<std::string> canonical_mobilenet_name(const std::string& torchvision_name);

struct ConversionReport {
  std::vector<std::pair<std::string, std::string>> renamed;  // (source, canonical)
  std::vector<std::string> skipped;
};

/// Renames every tensor of a torchvision-keyed archive. Unrecognised
/// `features.*` keys are an error; the output is cast to F32.
WeightArchive convert_mobilenet_archive(const WeightArchive& source, ConversionReport* report = nullptr);

}  // namespace ftseg

#endif  // FTSEG_WEIGHT_CONVERT_HPP

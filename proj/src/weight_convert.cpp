#include "ftseg/weight_convert.hpp"

#include "ftseg/network.hpp"

#include <regex>
#include <stdexcept>

namespace ftseg {

namespace {

// features index -> (stage, block), following the stage table.
std::optional<std::pair<int, int>> locate(int feature) {
  const auto& table = mobilenet_v2_stage_table();
  int next = 1;  // features.0 is the stem
  if (feature == 0) return std::pair(0, 0);
  for (int stage = 0; stage < int(table.size()); ++stage) {
    int block = stage == 0 ? 1 : 0;
    for (const auto& setting : table[std::size_t(stage)])
      for (int r = 0; r < setting.repeats; ++r, ++block, ++next)
        if (next == feature) return std::pair(stage, block);
    if (stage + 1 == int(table.size()) && feature == next) return std::pair(stage, block);  // final 1x1 conv
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::string> canonical_mobilenet_name(const std::string& name) {
  static const std::regex key(R"(^(?:encoder\.)?features\.(\d+)\.(.+)$)");
  std::smatch m;
  if (!std::regex_match(name, m, key)) {
    if (name.rfind("classifier.", 0) == 0) return std::nullopt;
    throw std::invalid_argument("unrecognised MobileNetV2 tensor '" + name + "'");
  }
  const int feature = std::stoi(m[1]);
  std::string rest = m[2];
  if (rest.size() >= 19 && rest.compare(rest.size() - 19, 19, "num_batches_tracked") == 0) return std::nullopt;
  const auto where = locate(feature);
  if (!where) throw std::invalid_argument("feature index " + std::to_string(feature) + " out of range in '" + name + "'");
  const auto [stage, block] = *where;
  const std::string prefix = "encoder." + std::to_string(stage) + "." + std::to_string(block) + ".";

  static const std::regex stem(R"(^([01])\.(.+)$)");
  static const std::regex ir(R"(^conv\.(\d+)(?:\.(\d+))?\.(.+)$)");
  if (feature == 0 || !std::regex_match(rest, m, ir)) {
    if (!std::regex_match(rest, m, stem)) throw std::invalid_argument("unrecognised MobileNetV2 tensor '" + name + "'");
    return prefix + (m[1] == "0" ? "conv." : "bn.") + std::string(m[2]);
  }
  const int a = std::stoi(m[1]);
  const int b = m[2].matched ? std::stoi(m[2]) : -1;
  const std::string leaf = m[3];
  const bool expands = feature != 1;  // only the first block has expansion 1
  std::string part;
  if (expands) {
    if (a == 0 && b == 0) part = "expand";
    else if (a == 0 && b == 1) part = "expand_bn";
    else if (a == 1 && b == 0) part = "dw";
    else if (a == 1 && b == 1) part = "dw_bn";
    else if (a == 2 && b < 0) part = "project";
    else if (a == 3 && b < 0) part = "project_bn";
  } else {
    if (a == 0 && b == 0) part = "dw";
    else if (a == 0 && b == 1) part = "dw_bn";
    else if (a == 1 && b < 0) part = "project";
    else if (a == 2 && b < 0) part = "project_bn";
  }
  if (part.empty()) throw std::invalid_argument("unrecognised MobileNetV2 tensor '" + name + "'");
  return prefix + part + "." + leaf;
}

WeightArchive convert_mobilenet_archive(const WeightArchive& source, ConversionReport* report) {
  WeightArchive out;
  for (const auto& t : source.tensors()) {
    const auto canonical = canonical_mobilenet_name(t.name);
    if (!canonical) {
      if (report) report->skipped.push_back(t.name);
      continue;
    }
    out.add(ArchiveTensor::from_values(*canonical, t.shape, t.values<float>()));
    if (report) report->renamed.emplace_back(t.name, *canonical);
  }
  out.metadata() = source.metadata();
  out.metadata()["encoder"] = "mobilenet_v2";
  out.metadata()["converted_from"] = "torchvision";
  return out;
}

}  // namespace ftseg

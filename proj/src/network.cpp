#include "ftseg/network.hpp"

#include <regex>

namespace ftseg {

std::string to_string(const LayerGroupId& id) {
  switch (id.kind) {
    case GroupKind::Encoder:
      return "encoder" + std::to_string(id.index);
    case GroupKind::Bottleneck:
      return "bottleneck";
    case GroupKind::DecoderBlock:
      return "decoder" + std::to_string(id.index);
    case GroupKind::Head:
      return "head";
  }
  return "?";
}

std::optional<LayerGroupId> parse_layer_group(const std::string& text) {
  if (text == "bottleneck") return LayerGroupId::bottleneck();
  if (text == "head") return LayerGroupId::head();
  static const std::regex re("(encoder|decoder)([0-9]+)");
  std::smatch m;
  if (!std::regex_match(text, m, re)) return std::nullopt;
  const int index = std::stoi(m[2]);
  return m[1] == "encoder" ? LayerGroupId::encoder(index) : LayerGroupId::decoder(index);
}

std::string to_string(EncoderKind k) { return k == EncoderKind::BaselineUNet ? "baseline_unet" : "mobilenet_v2"; }

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "baseline_unet") return EncoderKind::BaselineUNet;
  if (s == "mobilenet_v2") return EncoderKind::MobileNetV2;
  throw ModelError("unknown encoder kind '" + s + "'");
}

const std::vector<std::vector<InvertedResidualSetting>>& mobilenet_v2_stage_table() {
  // Grouped so that each stage ends at one of the five feature taps.
  static const std::vector<std::vector<InvertedResidualSetting>> table = {
      {{1, 16, 1, 1}},
      {{6, 24, 2, 2}},
      {{6, 32, 3, 2}},
      {{6, 64, 4, 2}, {6, 96, 3, 1}},
      {{6, 160, 3, 2}, {6, 320, 1, 1}},
  };
  return table;
}

std::vector<int> mobilenet_v2_tap_channels() {
  std::vector<int> taps;
  for (const auto& stage : mobilenet_v2_stage_table()) taps.push_back(stage.back().channels);
  taps.back() = kMobileNetLastChannels;
  return taps;
}

SegmentationModelSpec SegmentationModelSpec::baseline() {
  SegmentationModelSpec s;
  s.encoder_kind = EncoderKind::BaselineUNet;
  return s.normalized();
}

SegmentationModelSpec SegmentationModelSpec::mobilenet(bool pretrained) {
  SegmentationModelSpec s;
  s.encoder_kind = EncoderKind::MobileNetV2;
  s.encoder_pretrained = pretrained;
  return s.normalized();
}

SegmentationModelSpec SegmentationModelSpec::normalized() const {
  SegmentationModelSpec s = *this;
  if (s.input_channels < 1) throw ModelError("input_channels must be >= 1");
  if (s.num_classes < 1) throw ModelError("num_classes must be >= 1");
  if (s.encoder_kind == EncoderKind::BaselineUNet) {
    if (s.encoder_pretrained) throw ModelError("encoder_pretrained requires the mobilenet_v2 encoder");
    if (s.encoder_features.empty()) s.encoder_features = {64, 128, 256, 512};
    if (s.decoder_features.empty()) s.decoder_features.assign(s.encoder_features.rbegin(), s.encoder_features.rend());
    if (s.decoder_features.size() != s.encoder_features.size())
      throw ModelError("baseline U-Net needs one decoder width per encoder level");
  } else {
    const auto taps = mobilenet_v2_tap_channels();
    if (!s.encoder_features.empty() && s.encoder_features != taps)
      throw ModelError("mobilenet_v2 encoder taps are fixed at [16,24,32,96,1280]");
    s.encoder_features = taps;
    if (s.decoder_features.empty()) s.decoder_features = {256, 128, 64, 32, 16};
    if (s.decoder_features.size() != taps.size()) throw ModelError("mobilenet_v2 U-Net needs exactly 5 decoder widths");
  }
  for (int f : s.encoder_features)
    if (f < 1) throw ModelError("feature widths must be positive");
  for (int f : s.decoder_features)
    if (f < 1) throw ModelError("feature widths must be positive");
  return s;
}

}  // namespace ftseg

#ifndef FTSEG_NETWORK_HPP
#define FTSEG_NETWORK_HPP

#include "ftseg/layers.hpp"
#include "ftseg/parameter.hpp"
#include "ftseg/tensor.hpp"
#include "ftseg/weight_archive.hpp"

#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ftseg {

enum class EncoderKind { BaselineUNet, MobileNetV2 };

std::string to_string(EncoderKind k);
EncoderKind parse_encoder_kind(const std::string& s);

/// Invalid model description or weights that do not fit the model.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SegmentationModelSpec {
  EncoderKind encoder_kind = EncoderKind::MobileNetV2;
  bool encoder_pretrained = false;
  int input_channels = 3;
  int input_size = 512;
  /// Baseline: widths of the contracting path (bottleneck is twice the last).
  /// MobileNetV2: the fixed tap widths, filled in by `normalized()`.
  std::vector<int> encoder_features;
  std::vector<int> decoder_features;
  int num_classes = 1;
  std::uint64_t seed = 0;

  static SegmentationModelSpec baseline();
  static SegmentationModelSpec mobilenet(bool pretrained);

  /// Fills empty feature lists with the defaults for the encoder kind and
  /// checks the structural invariants.
  SegmentationModelSpec normalized() const;
};

/// MobileNetV2 stage layout: for each of the five feature taps, the inverted
/// residual settings (expansion t, output channels c, repeats n, first stride s).
struct InvertedResidualSetting {
  int expansion, channels, repeats, stride;
};
const std::vector<std::vector<InvertedResidualSetting>>& mobilenet_v2_stage_table();
inline constexpr int kMobileNetStemChannels = 32;
inline constexpr int kMobileNetLastChannels = 1280;
std::vector<int> mobilenet_v2_tap_channels();

enum class CountFilter { All, TrainableOnly, ByGroup };

struct ParameterCounts {
  std::int64_t total = 0;
  std::map<LayerGroupId, std::int64_t> by_group;  // filled for ByGroup only
};

/// Decoder stage: upsample x2, concatenate the matching encoder tap (if any),
/// then two conv-BN-ReLU stages.
template <typename Scalar>
class DecoderBlock {
 public:
  DecoderBlock(LayerPtr<Scalar> up, int skip_tap, std::unique_ptr<Sequential<Scalar>> convs)
      : up_(std::move(up)), skip_tap_(skip_tap), convs_(std::move(convs)) {}

  /// Index of the encoder tap concatenated after upsampling, or -1.
  int skip_tap() const { return skip_tap_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>* skip, bool training) {
    Tensor<Scalar> u = up_->forward(x, training);
    if (skip) {
      if (training) up_channels_ = u.channels();
      u = concat_channels(u, *skip);
    }
    return convs_->forward(u, training);
  }

  /// Returns (grad wrt x, grad wrt skip); either may be empty when not requested.
  std::pair<Tensor<Scalar>, Tensor<Scalar>> backward(const Tensor<Scalar>& grad, bool need_x, bool need_skip) {
    const bool need_cat = need_x || need_skip || up_->has_trainable();
    Tensor<Scalar> gcat = convs_->backward(grad, need_cat);
    if (!need_cat) return {};
    Tensor<Scalar> gup, gskip;
    if (skip_tap_ >= 0)
      split_channels(gcat, up_channels_, gup, gskip);
    else
      gup = std::move(gcat);
    Tensor<Scalar> gx = up_->backward(gup, need_x);
    return {std::move(gx), need_skip ? std::move(gskip) : Tensor<Scalar>()};
  }

  bool has_trainable() const { return up_->has_trainable() || convs_->has_trainable(); }

 private:
  LayerPtr<Scalar> up_;
  int skip_tap_;
  int up_channels_ = 0;
  std::unique_ptr<Sequential<Scalar>> convs_;
};

/// Encoder-decoder segmentation network with named, grouped parameters.
///
/// Data flow: encoder stages produce taps 0..S-1 (strictly increasing stride);
/// an optional bottleneck transforms the deepest tap; decoder block 0 consumes
/// the deepest feature map and block D-1 works at input resolution; a 1x1 head
/// produces per-pixel logits.
template <typename Scalar>
class SegmentationNetwork {
 public:
  SegmentationNetwork(SegmentationModelSpec spec, std::unique_ptr<ParameterRegistry<Scalar>> registry)
      : spec_(std::move(spec)), registry_(std::move(registry)) {}

  SegmentationNetwork(SegmentationNetwork&&) noexcept = default;
  SegmentationNetwork& operator=(SegmentationNetwork&&) noexcept = default;

  const SegmentationModelSpec& spec() const { return spec_; }
  ParameterRegistry<Scalar>& registry() { return *registry_; }
  const ParameterRegistry<Scalar>& registry() const { return *registry_; }
  std::deque<Parameter<Scalar>>& parameters() { return registry_->parameters(); }
  const std::deque<Parameter<Scalar>>& parameters() const { return registry_->parameters(); }
  std::deque<Buffer<Scalar>>& buffers() { return registry_->buffers(); }
  const std::deque<Buffer<Scalar>>& buffers() const { return registry_->buffers(); }

  /// Spatial sizes must be multiples of this.
  int size_multiple() const { return size_multiple_; }
  int num_encoder_stages() const { return int(stages_.size()); }
  int num_decoder_blocks() const { return int(decoder_.size()); }
  bool has_bottleneck() const { return bool(bottleneck_); }

  Parameter<Scalar>* find_parameter(const std::string& name) {
    for (auto& p : parameters())
      if (p.name == name) return &p;
    return nullptr;
  }

  /// Encoder taps only, evaluation mode.
  std::vector<Tensor<Scalar>> encode(const Tensor<Scalar>& x) {
    check_input(x);
    std::vector<Tensor<Scalar>> taps;
    const Tensor<Scalar>* h = &x;
    for (auto& stage : stages_) {
      taps.push_back(stage->forward(*h, false));
      h = &taps.back();
    }
    return taps;
  }

  /// Full forward pass. With `training` false no state is mutated and no
  /// activations are cached.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) {
    check_input(x);
    std::vector<Tensor<Scalar>> taps;
    taps.reserve(stages_.size());
    const Tensor<Scalar>* h = &x;
    for (auto& stage : stages_) {
      taps.push_back(stage->forward(*h, training));
      h = &taps.back();
    }
    Tensor<Scalar> feat = bottleneck_ ? bottleneck_->forward(taps.back(), training) : taps.back();
    for (auto& block : decoder_) {
      const int t = block->skip_tap();
      feat = block->forward(feat, t >= 0 ? &taps[std::size_t(t)] : nullptr, training);
    }
    return head_->forward(feat, training);
  }

  /// Back-propagates d(loss)/d(logits) from the last training-mode forward.
  /// Parameter gradients accumulate only into trainable parameters, and the
  /// pass stops at the earliest module that holds trainable parameters.
  void backward(const Tensor<Scalar>& grad_logits) {
    const int S = int(stages_.size());
    std::vector<bool> stage_trainable(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) stage_trainable[std::size_t(s)] = stages_[std::size_t(s)]->has_trainable();
    // any_stage_upto[s]: some stage <= s is trainable
    std::vector<bool> any_stage_upto(static_cast<std::size_t>(S));
    bool acc = false;
    for (int s = 0; s < S; ++s) any_stage_upto[std::size_t(s)] = acc = acc || stage_trainable[std::size_t(s)];
    const bool any_encoder = S > 0 && any_stage_upto.back();
    const bool bottleneck_trainable = bottleneck_ && bottleneck_->has_trainable();

    const int D = int(decoder_.size());
    // any_decoder_before[d]: some decoder block < d is trainable
    std::vector<bool> any_decoder_before(std::size_t(D) + 1, false);
    for (int d = 0; d < D; ++d)
      any_decoder_before[std::size_t(d) + 1] = any_decoder_before[std::size_t(d)] || decoder_[std::size_t(d)]->has_trainable();

    const bool before_head = any_encoder || bottleneck_trainable || any_decoder_before[std::size_t(D)];
    Tensor<Scalar> g = head_->backward(grad_logits, before_head);
    if (!before_head) return;

    std::vector<Tensor<Scalar>> tap_grads(static_cast<std::size_t>(S));
    for (int d = D - 1; d >= 0; --d) {
      auto& block = *decoder_[std::size_t(d)];
      const int t = block.skip_tap();
      const bool need_x = any_encoder || bottleneck_trainable || any_decoder_before[std::size_t(d)];
      const bool need_skip = t >= 0 && any_stage_upto[std::size_t(t)];
      auto [gx, gskip] = block.backward(g, need_x, need_skip);
      if (need_skip) accumulate(tap_grads[std::size_t(t)], gskip);
      g = std::move(gx);
      if (!need_x) break;
    }
    if (!any_encoder) {
      if (bottleneck_) bottleneck_->backward(g, false);
      return;
    }
    if (bottleneck_) g = bottleneck_->backward(g, true);
    for (int s = S - 1; s >= 0; --s) {
      accumulate(g, tap_grads[std::size_t(s)]);
      const bool need_in = s > 0 && any_stage_upto[std::size_t(s) - 1];
      if (g.empty()) {
        if (!need_in) break;
        continue;
      }
      g = stages_[std::size_t(s)]->backward(g, need_in);
      if (!need_in) break;
    }
  }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  // Builders populate the structure directly.
  std::vector<std::unique_ptr<Sequential<Scalar>>>& stages() { return stages_; }
  std::unique_ptr<Sequential<Scalar>>& bottleneck() { return bottleneck_; }
  std::vector<std::unique_ptr<DecoderBlock<Scalar>>>& decoder() { return decoder_; }
  std::unique_ptr<Conv2d<Scalar>>& head() { return head_; }
  void set_size_multiple(int m) { size_multiple_ = m; }

 private:
  void check_input(const Tensor<Scalar>& x) const {
    if (x.channels() != spec_.input_channels)
      throw ShapeError("forward: expected " + std::to_string(spec_.input_channels) + " input channels, got " +
                       x.shape_string());
    if (x.height() % size_multiple_ || x.width() % size_multiple_ || x.height() == 0 || x.width() == 0)
      throw ShapeError("forward: spatial size " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                       " is not a positive multiple of " + std::to_string(size_multiple_));
  }

  static void accumulate(Tensor<Scalar>& into, const Tensor<Scalar>& g) {
    if (g.empty()) return;
    if (into.empty())
      into = g;
    else
      into.data() += g.data();
  }

  SegmentationModelSpec spec_;
  std::unique_ptr<ParameterRegistry<Scalar>> registry_;
  std::vector<std::unique_ptr<Sequential<Scalar>>> stages_;
  std::unique_ptr<Sequential<Scalar>> bottleneck_;
  std::vector<std::unique_ptr<DecoderBlock<Scalar>>> decoder_;
  std::unique_ptr<Conv2d<Scalar>> head_;
  int size_multiple_ = 1;
};

namespace detail {

template <typename Scalar>
void conv_bn_relu(Sequential<Scalar>& seq, ParameterRegistry<Scalar>& reg, const std::string& conv_name,
                  const std::string& bn_name, int in, int out) {
  seq.template emplace<Conv2d<Scalar>>(reg, conv_name, in, out, 3, 1, 1, false);
  seq.template emplace<BatchNorm2d<Scalar>>(reg, bn_name, out);
  seq.template emplace<ClippedRelu<Scalar>>();
}

template <typename Scalar>
std::unique_ptr<Sequential<Scalar>> double_conv(ParameterRegistry<Scalar>& reg, int in, int out, bool pool_first) {
  auto seq = std::make_unique<Sequential<Scalar>>();
  if (pool_first) seq->template emplace<MaxPool2x2<Scalar>>();
  conv_bn_relu(*seq, reg, "conv1", "bn1", in, out);
  conv_bn_relu(*seq, reg, "conv2", "bn2", out, out);
  return seq;
}

template <typename Scalar>
void build_head(SegmentationNetwork<Scalar>& net, int in) {
  auto& reg = net.registry();
  reg.set_scope("head.", LayerGroupId::head());
  net.head() = std::make_unique<Conv2d<Scalar>>(reg, "conv", in, net.spec().num_classes, 1, 1, 0, true);
}

// One MobileNetV2 inverted residual block under the current registry scope.
template <typename Scalar>
LayerPtr<Scalar> inverted_residual(ParameterRegistry<Scalar>& reg, int in, int out, int stride, int expansion) {
  auto body = std::make_unique<Sequential<Scalar>>();
  const int hidden = in * expansion;
  if (expansion != 1) {
    body->template emplace<Conv2d<Scalar>>(reg, "expand", in, hidden, 1, 1, 0, false);
    body->template emplace<BatchNorm2d<Scalar>>(reg, "expand_bn", hidden);
    body->template emplace<ClippedRelu<Scalar>>(Scalar(6));
  }
  body->template emplace<DepthwiseConv2d<Scalar>>(reg, "dw", hidden, stride);
  body->template emplace<BatchNorm2d<Scalar>>(reg, "dw_bn", hidden);
  body->template emplace<ClippedRelu<Scalar>>(Scalar(6));
  body->template emplace<Conv2d<Scalar>>(reg, "project", hidden, out, 1, 1, 0, false);
  body->template emplace<BatchNorm2d<Scalar>>(reg, "project_bn", out);
  if (stride == 1 && in == out) return std::make_unique<Residual<Scalar>>(std::move(body));
  return body;
}

template <typename Scalar>
void load_encoder_weights(SegmentationNetwork<Scalar>& net, const WeightArchive& weights) {
  auto load = [&](const std::string& name, const Shape& shape, auto& value) {
    const auto* t = weights.find(name);
    if (!t) throw ModelError("weight archive is missing encoder tensor '" + name + "'");
    if (t->shape != shape)
      throw ModelError("weight archive tensor '" + name + "' has shape " + shape_string(t->shape) + ", expected " +
                       shape_string(shape));
    value = t->template values<Scalar>();
  };
  for (auto& p : net.parameters())
    if (p.group.kind == GroupKind::Encoder) load(p.name, p.shape, p.value);
  for (auto& b : net.buffers())
    if (b.group.kind == GroupKind::Encoder) load(b.name, b.shape, b.value);
}

}  // namespace detail

/// Classic U-Net: double-conv encoder stages, max-pool downsampling, a
/// bottleneck of twice the last encoder width, transposed-conv upsampling.
template <typename Scalar = float>
SegmentationNetwork<Scalar> build_baseline_unet(const SegmentationModelSpec& requested) {
  const auto spec = requested.normalized();
  if (spec.encoder_kind != EncoderKind::BaselineUNet) throw ModelError("build_baseline_unet: encoder kind must be BaselineUNet");
  if (spec.encoder_pretrained) throw ModelError("the baseline U-Net has no pretrained encoder");
  SegmentationNetwork<Scalar> net(spec, std::make_unique<ParameterRegistry<Scalar>>(spec.seed));
  auto& reg = net.registry();
  const auto& feats = spec.encoder_features;
  int in = spec.input_channels;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    reg.set_scope("encoder." + std::to_string(i) + ".", LayerGroupId::encoder(int(i)));
    net.stages().push_back(detail::double_conv(reg, in, feats[i], i > 0));
    in = feats[i];
  }
  reg.set_scope("bottleneck.", LayerGroupId::bottleneck());
  net.bottleneck() = detail::double_conv(reg, in, 2 * in, true);
  in *= 2;
  const int levels = int(feats.size());
  for (int d = 0; d < levels; ++d) {
    const int out = spec.decoder_features[std::size_t(d)];
    const int skip = levels - 1 - d;
    reg.set_scope("decoder." + std::to_string(d) + ".", LayerGroupId::decoder(d));
    auto up = std::make_unique<ConvTranspose2x2<Scalar>>(reg, "up", in, out);
    auto convs = detail::double_conv(reg, out + feats[std::size_t(skip)], out, false);
    net.decoder().push_back(std::make_unique<DecoderBlock<Scalar>>(std::move(up), skip, std::move(convs)));
    in = out;
  }
  detail::build_head(net, in);
  net.set_size_multiple(1 << levels);
  return net;
}

/// U-Net with a MobileNetV2 encoder (five taps at strides 2..32) and a
/// nearest-upsampling decoder of five blocks. Encoder parameters and running
/// statistics are copied from `weights` when the spec asks for a pretrained encoder.
template <typename Scalar = float>
SegmentationNetwork<Scalar> build_mobilenet_unet(const SegmentationModelSpec& requested,
                                                 const WeightArchive* weights = nullptr) {
  const auto spec = requested.normalized();
  if (spec.encoder_kind != EncoderKind::MobileNetV2) throw ModelError("build_mobilenet_unet: encoder kind must be MobileNetV2");
  if (spec.encoder_pretrained && !weights) throw ModelError("pretrained MobileNetV2 encoder requested without a weight archive");
  SegmentationNetwork<Scalar> net(spec, std::make_unique<ParameterRegistry<Scalar>>(spec.seed));
  auto& reg = net.registry();
  const auto& table = mobilenet_v2_stage_table();
  int in = spec.input_channels;
  for (std::size_t s = 0; s < table.size(); ++s) {
    auto stage = std::make_unique<Sequential<Scalar>>();
    int block = 0;
    auto scope = [&](int b) { reg.set_scope("encoder." + std::to_string(s) + "." + std::to_string(b) + ".", LayerGroupId::encoder(int(s))); };
    if (s == 0) {
      scope(block++);
      stage->template emplace<Conv2d<Scalar>>(reg, "conv", in, kMobileNetStemChannels, 3, 2, 1, false);
      stage->template emplace<BatchNorm2d<Scalar>>(reg, "bn", kMobileNetStemChannels);
      stage->template emplace<ClippedRelu<Scalar>>(Scalar(6));
      in = kMobileNetStemChannels;
    }
    for (const auto& setting : table[s]) {
      for (int r = 0; r < setting.repeats; ++r) {
        scope(block++);
        stage->push(detail::inverted_residual(reg, in, setting.channels, r == 0 ? setting.stride : 1, setting.expansion));
        in = setting.channels;
      }
    }
    if (s + 1 == table.size()) {
      scope(block++);
      stage->template emplace<Conv2d<Scalar>>(reg, "conv", in, kMobileNetLastChannels, 1, 1, 0, false);
      stage->template emplace<BatchNorm2d<Scalar>>(reg, "bn", kMobileNetLastChannels);
      stage->template emplace<ClippedRelu<Scalar>>(Scalar(6));
      in = kMobileNetLastChannels;
    }
    net.stages().push_back(std::move(stage));
  }
  const auto& taps = spec.encoder_features;
  const int D = int(spec.decoder_features.size());
  for (int d = 0; d < D; ++d) {
    const int skip = int(taps.size()) - 2 - d;  // -1 for the final block
    const int out = spec.decoder_features[std::size_t(d)];
    const int skip_ch = skip >= 0 ? taps[std::size_t(skip)] : 0;
    reg.set_scope("decoder." + std::to_string(d) + ".", LayerGroupId::decoder(d));
    auto convs = std::make_unique<Sequential<Scalar>>();
    detail::conv_bn_relu(*convs, reg, "conv1", "bn1", in + skip_ch, out);
    detail::conv_bn_relu(*convs, reg, "conv2", "bn2", out, out);
    net.decoder().push_back(
        std::make_unique<DecoderBlock<Scalar>>(std::make_unique<UpsampleNearest2x<Scalar>>(), skip, std::move(convs)));
    in = out;
  }
  detail::build_head(net, in);
  net.set_size_multiple(32);
  if (spec.encoder_pretrained) detail::load_encoder_weights(net, *weights);
  return net;
}

/// Dispatches on the spec's encoder kind.
template <typename Scalar = float>
SegmentationNetwork<Scalar> build_network(const SegmentationModelSpec& spec, const WeightArchive* weights = nullptr) {
  if (spec.encoder_kind == EncoderKind::BaselineUNet) return build_baseline_unet<Scalar>(spec);
  return build_mobilenet_unet<Scalar>(spec, weights);
}

template <typename Scalar>
Tensor<Scalar> forward(SegmentationNetwork<Scalar>& net, const Tensor<Scalar>& batch) {
  return net.forward(batch, false);
}

template <typename Scalar>
ParameterCounts count_parameters(const SegmentationNetwork<Scalar>& net, CountFilter filter) {
  ParameterCounts counts;
  for (const auto& p : net.parameters()) {
    if (filter == CountFilter::TrainableOnly && !p.trainable) continue;
    counts.total += p.count();
    if (filter == CountFilter::ByGroup) counts.by_group[p.group] += p.count();
  }
  return counts;
}

/// Group listing in data-flow order; every parameter name appears exactly once.
template <typename Scalar>
std::vector<std::pair<LayerGroupId, std::vector<std::string>>> enumerate_layer_groups(
    const SegmentationNetwork<Scalar>& net) {
  std::map<LayerGroupId, std::vector<std::string>> groups;
  for (const auto& p : net.parameters()) groups[p.group].push_back(p.name);
  return {groups.begin(), groups.end()};
}

template <typename Scalar>
std::vector<LayerGroupId> layer_group_ids(const SegmentationNetwork<Scalar>& net) {
  std::vector<LayerGroupId> ids;
  for (auto& [id, names] : enumerate_layer_groups(net)) ids.push_back(id);
  return ids;
}

/// Encoder parameters and running statistics as a weight archive, named as
/// the network names them (`encoder.<stage>.<block>.<tensor>`).
template <typename Scalar>
WeightArchive export_encoder(const SegmentationNetwork<Scalar>& net) {
  WeightArchive archive;
  for (const auto& p : net.parameters())
    if (p.group.kind == GroupKind::Encoder) archive.add(ArchiveTensor::from_values(p.name, p.shape, p.value));
  for (const auto& b : net.buffers())
    if (b.group.kind == GroupKind::Encoder) archive.add(ArchiveTensor::from_values(b.name, b.shape, b.value));
  archive.metadata()["encoder"] = to_string(net.spec().encoder_kind);
  return archive;
}

}  // namespace ftseg

#endif  // FTSEG_NETWORK_HPP

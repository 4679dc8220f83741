#ifndef FTSEG_PARAMETER_HPP
#define FTSEG_PARAMETER_HPP

#include "ftseg/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <compare>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ftseg {

enum class GroupKind { Encoder, Bottleneck, DecoderBlock, Head };

/// Identifies one freezable layer group. Ordering follows the data flow
/// through the network: encoder stages, bottleneck, decoder blocks, head.
struct LayerGroupId {
  GroupKind kind = GroupKind::Head;
  int index = 0;  // unused for Bottleneck and Head

  static LayerGroupId encoder(int i) { return {GroupKind::Encoder, i}; }
  static LayerGroupId bottleneck() { return {GroupKind::Bottleneck, 0}; }
  static LayerGroupId decoder(int i) { return {GroupKind::DecoderBlock, i}; }
  static LayerGroupId head() { return {GroupKind::Head, 0}; }

  auto operator<=>(const LayerGroupId&) const = default;
};

std::string to_string(const LayerGroupId& id);
std::optional<LayerGroupId> parse_layer_group(const std::string& text);

/// One learnable tensor. `grad` is allocated on first use so that networks
/// built only for accounting stay cheap.
template <typename Scalar>
struct Parameter {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::string name;
  LayerGroupId group;
  Shape shape;
  Vector value;
  Vector grad;
  bool trainable = true;

  std::int64_t count() const { return shape_count(shape); }
  Vector& gradient() {
    if (grad.size() != value.size()) grad = Vector::Zero(value.size());
    return grad;
  }
  void zero_grad() {
    if (grad.size()) grad.setZero();
  }
};

/// Non-learnable persistent state (normalisation running statistics).
template <typename Scalar>
struct Buffer {
  std::string name;
  LayerGroupId group;
  Shape shape;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> value;
};

/// Owns every parameter and buffer of a network. Elements live in deques so
/// the pointers handed to layers stay valid as the registry grows.
template <typename Scalar>
class ParameterRegistry {
 public:
  explicit ParameterRegistry(std::uint64_t seed) : rng_(seed) {}
  ParameterRegistry(const ParameterRegistry&) = delete;
  ParameterRegistry& operator=(const ParameterRegistry&) = delete;

  void set_scope(const std::string& prefix, LayerGroupId group) {
    prefix_ = prefix;
    group_ = group;
  }

  /// He-uniform weight: U(-b, b) with b = sqrt(6 / fan_in).
  Parameter<Scalar>* he_uniform(const std::string& name, Shape shape, std::int64_t fan_in) {
    auto* p = add(name, std::move(shape));
    const double bound = std::sqrt(6.0 / double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value[i] = Scalar(dist(rng_));
    return p;
  }

  Parameter<Scalar>* constant(const std::string& name, Shape shape, Scalar v) {
    auto* p = add(name, std::move(shape));
    p->value.setConstant(v);
    return p;
  }

  Buffer<Scalar>* buffer(const std::string& name, Shape shape, Scalar v) {
    auto& b = buffers_.emplace_back();
    b.name = prefix_ + name;
    b.group = group_;
    b.shape = std::move(shape);
    b.value = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Constant(shape_count(b.shape), v);
    return &b;
  }

  std::deque<Parameter<Scalar>>& parameters() { return params_; }
  const std::deque<Parameter<Scalar>>& parameters() const { return params_; }
  std::deque<Buffer<Scalar>>& buffers() { return buffers_; }
  const std::deque<Buffer<Scalar>>& buffers() const { return buffers_; }

 private:
  Parameter<Scalar>* add(const std::string& name, Shape shape) {
    auto& p = params_.emplace_back();
    p.name = prefix_ + name;
    p.group = group_;
    p.shape = std::move(shape);
    p.value = Parameter<Scalar>::Vector::Zero(shape_count(p.shape));
    return &p;
  }

  std::mt19937_64 rng_;
  std::string prefix_;
  LayerGroupId group_;
  std::deque<Parameter<Scalar>> params_;
  std::deque<Buffer<Scalar>> buffers_;
};

}  // namespace ftseg

#endif  // FTSEG_PARAMETER_HPP

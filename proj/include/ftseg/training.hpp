#ifndef FTSEG_TRAINING_HPP
#define FTSEG_TRAINING_HPP

#include "ftseg/bounded_queue.hpp"
#include "ftseg/data_pipeline.hpp"
#include "ftseg/freeze_policy.hpp"
#include "ftseg/losses.hpp"
#include "ftseg/metrics.hpp"
#include "ftseg/network.hpp"
#include "ftseg/weight_archive.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ftseg {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 10;
  double lr_initial = 1e-4;
  double lr_decay_per_epoch = 0.95;
  LossKind loss = LossKind::DiceBCE;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augment = true;
  AugmentationConfig augmentation;
  /// Batches prepared ahead of the optimiser; 0 prepares them inline.
  int prefetch = 2;
  int eval_batch_size = 10;
  double threshold = 0.5;
  /// Recorded in checkpoints; set by the experiment runner.
  std::string config_hash;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

/// lr_initial * decay^epoch.
double lr_schedule(const TrainConfig& cfg, int epoch);

/// Optimiser steps per epoch with the last partial batch kept.
inline int steps_per_epoch(int samples, int batch_size) { return (samples + batch_size - 1) / batch_size; }

struct EpochLog {
  int epoch = 0;
  double mean_train_loss = 0;
  double lr = 0;
  double val_dice = 0;
  double wall_seconds = 0;
  int steps = 0;
};

nlohmann::json to_json(const EpochLog& e);
EpochLog epoch_log_from_json(const nlohmann::json& j);

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(int epoch, int batch, double loss)
      : std::runtime_error("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch)),
        epoch(epoch),
        batch(batch),
        loss(loss) {}
  int epoch, batch;
  double loss;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with bias correction. Only parameters flagged trainable are read or written.
template <typename Scalar>
class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(SegmentationNetwork<Scalar>& net, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (auto& p : net.parameters()) {
      if (!p.trainable) continue;
      auto& g = p.gradient();
      auto& [m, v] = state_[p.name];
      if (m.size() != g.size()) {
        m = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(g.size());
        v = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(g.size());
      }
      m = Scalar(b1_) * m + Scalar(1 - b1_) * g;
      v = Scalar(b2_) * v + Scalar(1 - b2_) * g.cwiseAbs2();
      p.value.array() -= Scalar(lr) * (m.array() / Scalar(c1)) / ((v.array() / Scalar(c2)).sqrt() + Scalar(eps_));
    }
  }

  long steps() const { return t_; }

 private:
  double b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>>
      state_;
};

/// One forward/backward/update on a prepared batch; returns the loss.
template <typename Scalar>
double train_step(SegmentationNetwork<Scalar>& net, AdamOptimizer<Scalar>& opt, const Tensor<Scalar>& x,
                  const Tensor<Scalar>& y, LossKind kind, double lr, int epoch = 0, int batch = 0) {
  net.zero_grad();
  const Tensor<Scalar> logits = net.forward(x, true);
  auto loss = compute_loss(logits, y, kind);
  if (!std::isfinite(loss.value)) throw NonFiniteLossError(epoch, batch, loss.value);
  net.backward(loss.grad);
  opt.step(net, lr);
  return loss.value;
}

struct EvalOptions {
  double threshold = 0.5;
  Normalization normalization = Normalization::UnitRange;
  Averaging averaging = Averaging::Micro;
  int batch_size = 10;
};

/// Evaluation-mode inference over `data`, thresholding sigmoid(logits).
template <typename Scalar>
MetricReport evaluate(SegmentationNetwork<Scalar>& net, std::span<const Sample> data, const EvalOptions& opt = {}) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  MetricAccumulator acc(opt.averaging);
  const std::size_t bs = std::size_t(std::max(1, opt.batch_size));
  for (std::size_t start = 0; start < data.size(); start += bs) {
    const auto chunk = data.subspan(start, std::min(bs, data.size() - start));
    auto [x, y] = make_batch<Scalar>(chunk, opt.normalization);
    const Tensor<Scalar> logits = net.forward(x, false);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto plane = logits.plane(int(i));
      Raster z = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                     plane.data(), logits.height(), logits.width())
                     .template cast<float>()
                     .array();
      acc.add(confusion(binarize_logits(z, opt.threshold), chunk[i].mask));
    }
  }
  return acc.report();
}

/// Full network state plus provenance.
struct Checkpoint {
  WeightArchive tensors;  // every parameter and buffer
  TrainabilityMask trainability;
  std::string strategy;
  std::string config_hash;
  int epoch = -1;
  nlohmann::json metrics = nlohmann::json::object();
};

template <typename Scalar>
TrainabilityMask current_mask(const SegmentationNetwork<Scalar>& net) {
  std::map<LayerGroupId, bool> entries;
  for (const auto& p : net.parameters()) {
    auto [it, inserted] = entries.emplace(p.group, p.trainable);
    if (!inserted && it->second != p.trainable)
      throw ConfigError("group " + to_string(p.group) + " mixes trainable and frozen parameters");
  }
  return TrainabilityMask(std::move(entries));
}

template <typename Scalar>
Checkpoint snapshot(const SegmentationNetwork<Scalar>& net, const std::string& strategy, const std::string& config_hash,
                    int epoch) {
  Checkpoint c;
  for (const auto& p : net.parameters()) c.tensors.add(ArchiveTensor::from_values(p.name, p.shape, p.value));
  for (const auto& b : net.buffers()) c.tensors.add(ArchiveTensor::from_values(b.name, b.shape, b.value));
  c.trainability = current_mask(net);
  c.strategy = strategy;
  c.config_hash = config_hash;
  c.epoch = epoch;
  return c;
}

/// Copies checkpoint values into `net`; every network tensor must be present
/// with the same shape and the checkpoint may not hold extra tensors.
template <typename Scalar>
void restore(SegmentationNetwork<Scalar>& net, const Checkpoint& ckpt) {
  std::size_t expected = 0;
  auto copy = [&](const std::string& name, const Shape& shape, auto& value) {
    const auto* t = ckpt.tensors.find(name);
    if (!t) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (t->shape != shape)
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(t->shape) + ", network expects " +
                       shape_string(shape));
    value = t->template values<Scalar>();
    ++expected;
  };
  for (auto& p : net.parameters()) copy(p.name, p.shape, p.value);
  for (auto& b : net.buffers()) copy(b.name, b.shape, b.value);
  if (expected != ckpt.tensors.size()) throw CheckpointError("checkpoint holds tensors the network does not have");
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
struct TrainResult {
  std::vector<EpochLog> logs;
  Checkpoint best;
};

namespace detail {

template <typename Scalar>
struct PreparedBatch {
  Tensor<Scalar> x, y;
  int index = 0;
  std::exception_ptr error;
};

template <typename Scalar>
PreparedBatch<Scalar> prepare_batch(std::span<const Sample> data, std::span<const std::size_t> order, int index,
                                    int epoch, const TrainConfig& cfg) {
  PreparedBatch<Scalar> b;
  b.index = index;
  try {
    std::vector<Sample> batch;
    batch.reserve(order.size());
    for (std::size_t i : order) {
      const Sample& s = data[i];
      if (cfg.augment) {
        auto rng = keyed_rng(cfg.seed, s.id, std::uint64_t(epoch));
        batch.push_back(augment(s, cfg.augmentation, rng));
      } else {
        batch.push_back(s);
      }
    }
    std::tie(b.x, b.y) = make_batch<Scalar>(batch, cfg.augmentation.normalization);
  } catch (...) {
    b.error = std::current_exception();
  }
  return b;
}

}  // namespace detail

/// Mini-batch Adam over `cfg.epochs` epochs. The strategy must already be
/// applied to `net`. Each epoch reshuffles the training set, augments every
/// sample from a generator keyed by (seed, id, epoch), steps the optimiser
/// once per batch and scores Dice on `val_data`. The returned checkpoint is
/// the epoch with the best validation Dice; `net` is left at the last epoch.
template <typename Scalar>
TrainResult<Scalar> train(SegmentationNetwork<Scalar>& net, FineTuneStrategy strategy, std::span<const Sample> train_data,
                          std::span<const Sample> val_data, const TrainConfig& cfg,
                          const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (train_data.empty() || val_data.empty()) throw std::invalid_argument("train: empty train or validation data");
  const auto mask = current_mask(net);
  if (mask != trainable_mask(strategy, layer_group_ids(net)))
    throw ConfigError("train: network flags do not match strategy " + to_string(strategy));

  AdamOptimizer<Scalar> opt(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  const EvalOptions eval{cfg.threshold, cfg.augmentation.normalization, Averaging::Micro, cfg.eval_batch_size};
  const int bs = cfg.batch_size;
  const int nbatches = steps_per_epoch(int(train_data.size()), bs);

  TrainResult<Scalar> result;
  double best_dice = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    auto order_rng = keyed_rng(cfg.seed, "#order", std::uint64_t(epoch));
    std::shuffle(order.begin(), order.end(), order_rng);
    auto batch_order = [&](int b) {
      const std::size_t lo = std::size_t(b) * std::size_t(bs);
      return std::span<const std::size_t>(order).subspan(lo, std::min(std::size_t(bs), order.size() - lo));
    };

    const double lr = lr_schedule(cfg, epoch);
    double loss_sum = 0;
    auto consume = [&](detail::PreparedBatch<Scalar>&& b) {
      if (b.error) std::rethrow_exception(b.error);
      loss_sum += train_step(net, opt, b.x, b.y, cfg.loss, lr, epoch, b.index);
    };
    if (cfg.prefetch <= 0) {
      for (int b = 0; b < nbatches; ++b)
        consume(detail::prepare_batch<Scalar>(train_data, batch_order(b), b, epoch, cfg));
    } else {
      BoundedQueue<detail::PreparedBatch<Scalar>> queue(std::size_t(cfg.prefetch));
      std::jthread producer([&] {
        for (int b = 0; b < nbatches; ++b)
          if (!queue.push(detail::prepare_batch<Scalar>(train_data, batch_order(b), b, epoch, cfg))) return;
        queue.close();
      });
      try {
        for (int b = 0; b < nbatches; ++b) {
          auto item = queue.pop();
          if (!item) break;
          consume(std::move(*item));
        }
      } catch (...) {
        queue.close();
        throw;
      }
    }

    const auto report = evaluate(net, val_data, eval);
    EpochLog log;
    log.epoch = epoch;
    log.mean_train_loss = loss_sum / nbatches;
    log.lr = lr;
    log.val_dice = report.dice;
    log.steps = nbatches;
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.logs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (report.dice > best_dice) {
      best_dice = report.dice;
      result.best = snapshot(net, to_string(strategy), cfg.config_hash, epoch);
      result.best.metrics = to_json(report);
    }
  }
  return result;
}

}  // namespace ftseg

#endif  // FTSEG_TRAINING_HPP

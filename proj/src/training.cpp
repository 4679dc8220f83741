#include "ftseg/training.hpp"

#include <cmath>

namespace ftseg {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::DiceLoss:
      return "dice";
    case LossKind::BCE:
      return "bce";
    case LossKind::DiceBCE:
      return "dice_bce";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "dice") return LossKind::DiceLoss;
  if (s == "bce") return LossKind::BCE;
  if (s == "dice_bce") return LossKind::DiceBCE;
  throw std::invalid_argument("unknown loss '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr_initial > 0)) throw ConfigError("train.lr_initial must be positive");
  if (!(lr_decay_per_epoch > 0 && lr_decay_per_epoch <= 1)) throw ConfigError("train.lr_decay_per_epoch must lie in (0, 1]");
  if (eval_batch_size < 1) throw ConfigError("train.eval_batch_size must be >= 1");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("train.threshold must lie in (0, 1)");
  augmentation.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_initial", c.lr_initial},
          {"lr_decay_per_epoch", c.lr_decay_per_epoch},
          {"loss", to_string(c.loss)},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"augment", c.augment},
          {"prefetch", c.prefetch},
          {"eval_batch_size", c.eval_batch_size},
          {"threshold", c.threshold}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_initial = j.value("lr_initial", c.lr_initial);
  c.lr_decay_per_epoch = j.value("lr_decay_per_epoch", c.lr_decay_per_epoch);
  if (j.contains("loss")) c.loss = parse_loss_kind(j["loss"].get<std::string>());
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.augment = j.value("augment", c.augment);
  c.prefetch = j.value("prefetch", c.prefetch);
  c.eval_batch_size = j.value("eval_batch_size", c.eval_batch_size);
  c.threshold = j.value("threshold", c.threshold);
  return c;
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) throw std::out_of_range("lr_schedule: epoch outside [0, epochs)");
  return cfg.lr_initial * std::pow(cfg.lr_decay_per_epoch, double(epoch));
}

nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},       {"mean_train_loss", e.mean_train_loss}, {"lr", e.lr},
          {"val_dice", e.val_dice}, {"wall_seconds", e.wall_seconds},       {"steps", e.steps}};
}

EpochLog epoch_log_from_json(const nlohmann::json& j) {
  EpochLog e;
  e.epoch = j.at("epoch").get<int>();
  e.mean_train_loss = j.at("mean_train_loss").get<double>();
  e.lr = j.at("lr").get<double>();
  e.val_dice = j.at("val_dice").get<double>();
  e.wall_seconds = j.value("wall_seconds", 0.0);
  e.steps = j.value("steps", 0);
  return e;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  WeightArchive archive = ckpt.tensors;
  nlohmann::json mask = nlohmann::json::object();
  for (const auto& [g, on] : ckpt.trainability.entries()) mask[to_string(g)] = on;
  archive.metadata() = {{"format", "ftseg-checkpoint"},
                        {"strategy", ckpt.strategy},
                        {"config_hash", ckpt.config_hash},
                        {"epoch", ckpt.epoch},
                        {"metrics", ckpt.metrics},
                        {"trainability", mask}};
  save_weight_archive(archive, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  WeightArchive archive;
  try {
    archive = load_weight_archive(path);
  } catch (const ArchiveError& e) {
    throw CheckpointError("corrupted checkpoint " + path.string() + ": " + e.what());
  }
  const auto meta = archive.metadata();
  if (meta.value("format", "") != "ftseg-checkpoint") throw CheckpointError(path.string() + " is not a checkpoint");
  Checkpoint c;
  std::map<LayerGroupId, bool> entries;
  for (const auto& [name, on] : meta.at("trainability").items()) {
    auto g = parse_layer_group(name);
    if (!g) throw CheckpointError("checkpoint names unknown group '" + name + "'");
    entries[*g] = on.get<bool>();
  }
  c.trainability = TrainabilityMask(std::move(entries));
  c.strategy = meta.at("strategy").get<std::string>();
  c.config_hash = meta.at("config_hash").get<std::string>();
  c.epoch = meta.at("epoch").get<int>();
  c.metrics = meta.value("metrics", nlohmann::json::object());
  archive.metadata() = nlohmann::json::object();
  c.tensors = std::move(archive);
  return c;
}

}  // namespace ftseg

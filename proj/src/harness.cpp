#include "ftseg/harness.hpp"

#include "ftseg/io_util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ftseg {

namespace {

// Typed lookups that report the field path on failure.
struct Section {
  const json& obj;
  std::string path;

  std::string at(const std::string& key) const { return path.empty() ? key : path + "." + key; }

  void only(std::initializer_list<const char*> keys) const {
    if (!obj.is_object()) throw SpecError(path.empty() ? "<root>" : path, "expected an object");
    std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : obj.items())
      if (!allowed.count(k)) throw SpecError(at(k), "unknown field");
  }

  bool has(const std::string& key) const { return obj.contains(key) && !obj.at(key).is_null(); }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception& e) {
      throw SpecError(at(key), std::string("wrong type: ") + e.what());
    }
  }

  Section sub(const std::string& key) const {
    static const json empty = json::object();
    return Section{has(key) ? obj.at(key) : empty, at(key)};
  }
};

template <typename F>
auto guarded(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const SpecError&) {
    throw;
  } catch (const std::exception& e) {
    throw SpecError(path, e.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string encoder_name(EncoderKind k) { return k == EncoderKind::BaselineUNet ? "baseline_unet" : "mobilenet_v2"; }

EncoderKind parse_encoder(const std::string& s) {
  if (s == "baseline_unet") return EncoderKind::BaselineUNet;
  if (s == "mobilenet_v2") return EncoderKind::MobileNetV2;
  throw std::invalid_argument("unknown encoder '" + s + "' (expected baseline_unet or mobilenet_v2)");
}

std::int64_t cached_baseline_total() {
  static const std::int64_t total = default_baseline_total();
  return total;
}

}  // namespace

ExperimentSpec validate_spec(const json& config, const fs::path& base_dir) {
  const Section root{config, ""};
  root.only({"schema_version", "dataset", "model", "strategies", "repeats", "train", "augmentation", "metrics",
             "output_dir", "base_seed"});
  ExperimentSpec spec;
  spec.schema_version = root.get("schema_version", kSchemaVersion);
  if (spec.schema_version != kSchemaVersion)
    throw SpecError("schema_version", "unsupported version " + std::to_string(spec.schema_version) + " (expected " +
                                          std::to_string(kSchemaVersion) + ")");

  // model
  const Section model = root.sub("model");
  model.only({"encoder", "pretrained", "weights", "allow_random_encoder", "input_size", "encoder_features",
              "decoder_features", "baseline_features"});
  auto& m = spec.model;
  m.encoder_kind =
      guarded(model.at("encoder"), [&] { return parse_encoder(model.get<std::string>("encoder", "mobilenet_v2")); });
  m.encoder_pretrained = model.get("pretrained", false);
  m.input_size = model.get("input_size", 512);
  m.encoder_features = model.get("encoder_features", std::vector<int>{});
  m.decoder_features = model.get("decoder_features", std::vector<int>{});
  m = guarded(model.path.empty() ? "model" : model.path, [&] { return m.normalized(); });
  if (m.encoder_kind == EncoderKind::BaselineUNet && m.encoder_pretrained)
    throw SpecError(model.at("pretrained"), "the baseline U-Net has no pretrained encoder");
  spec.encoder_weights = resolve(model.get<std::string>("weights", ""), base_dir);
  if (m.encoder_pretrained && spec.encoder_weights.empty())
    throw SpecError(model.at("weights"), "a pretrained encoder needs a weight archive path");
  spec.allow_random_encoder = model.get("allow_random_encoder", false);
  const int multiple = m.encoder_kind == EncoderKind::MobileNetV2 ? 32 : (1 << m.encoder_features.size());
  if (m.input_size <= 0 || m.input_size % std::max(multiple, 32))
    throw SpecError(model.at("input_size"), "must be a positive multiple of " + std::to_string(std::max(multiple, 32)));

  // strategies
  if (!root.has("strategies")) throw SpecError("strategies", "required");
  const json& sj = config.at("strategies");
  if (sj.is_string() && sj.get<std::string>() == "all") {
    spec.strategies.assign(kAllStrategies.begin(), kAllStrategies.end());
  } else if (sj.is_array()) {
    for (std::size_t i = 0; i < sj.size(); ++i) {
      const std::string path = "strategies[" + std::to_string(i) + "]";
      if (!sj[i].is_string()) throw SpecError(path, "expected a strategy name");
      spec.strategies.push_back(guarded(path, [&] { return parse_strategy(sj[i].get<std::string>()); }));
    }
  } else {
    throw SpecError("strategies", "expected a list of strategy names or \"all\"");
  }
  if (spec.strategies.empty()) throw SpecError("strategies", "must not be empty");
  {
    std::set<FineTuneStrategy> seen;
    for (auto s : spec.strategies)
      if (!seen.insert(s).second) throw SpecError("strategies", "duplicate strategy " + to_string(s));
  }
  if (m.encoder_kind == EncoderKind::BaselineUNet) {
    spec.baseline_model = m;
  } else {
    auto& b = spec.baseline_model;
    b.encoder_kind = EncoderKind::BaselineUNet;
    b.input_size = m.input_size;
    b.encoder_features = model.get("baseline_features", std::vector<int>{});
    b = guarded(model.at("baseline_features"), [&] { return b.normalized(); });
    if (b.input_size % (1 << b.encoder_features.size()))
      throw SpecError(model.at("input_size"), "not divisible by the baseline U-Net's downsampling factor");
  }
  // Eager compatibility check against the group listing of each strategy's architecture.
  for (std::size_t i = 0; i < spec.strategies.size(); ++i) {
    const auto s = spec.strategies[i];
    const auto& ms = model_for(spec, s);
    std::vector<LayerGroupId> groups;
    const int levels = ms.encoder_kind == EncoderKind::BaselineUNet ? int(ms.encoder_features.size()) : 5;
    for (int k = 0; k < levels; ++k) groups.push_back(LayerGroupId::encoder(k));
    if (ms.encoder_kind == EncoderKind::BaselineUNet) groups.push_back(LayerGroupId::bottleneck());
    for (std::size_t k = 0; k < ms.decoder_features.size(); ++k) groups.push_back(LayerGroupId::decoder(int(k)));
    groups.push_back(LayerGroupId::head());
    const std::string path = "strategies[" + std::to_string(i) + "]";
    guarded(path, [&] {
      check_compatible(s, groups);
      return 0;
    });
    if (requires_pretrained_encoder(s) && !ms.encoder_pretrained && !spec.allow_random_encoder)
      throw SpecError(path, to_string(s) + " expects a pretrained encoder; set model.pretrained or model.allow_random_encoder");
  }

  spec.repeats = root.get("repeats", 4);
  if (spec.repeats < 1) throw SpecError("repeats", "must be >= 1");
  spec.base_seed = root.get<std::uint64_t>("base_seed", 0);

  // augmentation and training
  const Section aug = root.sub("augmentation");
  aug.only({"max_rotation_degrees", "hflip_prob", "vflip_prob", "normalization"});
  AugmentationConfig a;
  a.max_rotation_degrees = aug.get("max_rotation_degrees", a.max_rotation_degrees);
  a.hflip_prob = aug.get("hflip_prob", a.hflip_prob);
  a.vflip_prob = aug.get("vflip_prob", a.vflip_prob);
  a.normalization = m.encoder_pretrained ? Normalization::ImageNetStats : Normalization::UnitRange;
  if (aug.has("normalization"))
    a.normalization = guarded(aug.at("normalization"),
                              [&] { return parse_normalization(aug.get<std::string>("normalization", "")); });
  guarded("augmentation", [&] {
    a.validate();
    return 0;
  });

  const Section train = root.sub("train");
  train.only({"epochs", "batch_size", "lr_initial", "lr_decay_per_epoch", "loss", "adam_beta1", "adam_beta2",
              "adam_eps", "augment", "prefetch", "eval_batch_size", "threshold"});
  spec.train = guarded("train", [&] { return train_config_from_json(train.obj); });
  spec.train.augmentation = a;
  guarded("train", [&] {
    spec.train.validate();
    return 0;
  });

  const Section metrics = root.sub("metrics");
  metrics.only({"averaging"});
  spec.averaging = guarded(metrics.at("averaging"),
                           [&] { return parse_averaging(metrics.get<std::string>("averaging", "micro")); });

  // dataset
  const Section ds = root.sub("dataset");
  ds.only({"kind", "root", "phantom", "split", "resplit_per_repeat"});
  auto& d = spec.dataset;
  const std::string kind = ds.get<std::string>("kind", "phantom");
  if (kind == "hc18")
    d.kind = DatasetKind::HC18;
  else if (kind == "phantom")
    d.kind = DatasetKind::Phantom;
  else
    throw SpecError(ds.at("kind"), "expected hc18 or phantom");
  d.root = resolve(ds.get<std::string>("root", ""), base_dir);
  if (d.kind == DatasetKind::HC18 && d.root.empty()) throw SpecError(ds.at("root"), "required for hc18");
  const Section ph = ds.sub("phantom");
  ph.only({"n", "seed", "size"});
  d.phantom_n = ph.get("n", d.phantom_n);
  d.phantom_seed = ph.get<std::uint64_t>("seed", d.phantom_seed);
  d.phantom_size = ph.get("size", m.input_size);
  if (d.phantom_n < 2) throw SpecError(ph.at("n"), "must be >= 2");
  if (d.phantom_size <= 0 || d.phantom_size % 32) throw SpecError(ph.at("size"), "must be a positive multiple of 32");

  const Section sp = ds.sub("split");
  sp.only({"total", "train_count", "test_count", "seed"});
  SplitConfig defaults;
  if (d.kind == DatasetKind::Phantom && d.root.empty()) {
    defaults.total = d.phantom_n;
    defaults.train_count = int(std::lround(0.8 * d.phantom_n));
    defaults.test_count = defaults.total - defaults.train_count;
  }
  d.split.train_count = sp.get("train_count", defaults.train_count);
  d.split.test_count = sp.get("test_count", defaults.test_count);
  d.split.total = sp.get("total", d.split.train_count + d.split.test_count);
  d.split.seed = sp.get<std::uint64_t>("seed", defaults.seed);
  guarded(sp.path, [&] {
    d.split.validate();
    return 0;
  });
  if (d.split.train_count < 1 || d.split.test_count < 1)
    throw SpecError(sp.path, "train and test splits must both be non-empty");
  d.resplit_per_repeat = ds.get("resplit_per_repeat", false);

  spec.output_dir = resolve(root.get<std::string>("output_dir", ""), base_dir);
  if (spec.output_dir.empty()) {
    if (const char* env = std::getenv("FTSEG_OUTPUT_DIR"); env && *env) spec.output_dir = env;
  }
  return spec;
}

ExperimentSpec load_spec(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file_text(path));
  } catch (const json::parse_error& e) {
    throw SpecError("<root>", "cannot parse " + path.string() + ": " + e.what());
  }
  return validate_spec(j, path.parent_path());
}

json to_json(const ExperimentSpec& spec) {
  json strategies = json::array();
  for (auto s : spec.strategies) strategies.push_back(to_string(s));
  const auto& d = spec.dataset;
  const auto& a = spec.train.augmentation;
  json train = to_json(spec.train);
  return {{"schema_version", spec.schema_version},
          {"dataset",
           {{"kind", d.kind == DatasetKind::HC18 ? "hc18" : "phantom"},
            {"root", d.root.string()},
            {"phantom", {{"n", d.phantom_n}, {"seed", d.phantom_seed}, {"size", d.phantom_size}}},
            {"split",
             {{"total", d.split.total},
              {"train_count", d.split.train_count},
              {"test_count", d.split.test_count},
              {"seed", d.split.seed}}},
            {"resplit_per_repeat", d.resplit_per_repeat}}},
          {"model",
           {{"encoder", encoder_name(spec.model.encoder_kind)},
            {"pretrained", spec.model.encoder_pretrained},
            {"weights", spec.encoder_weights.string()},
            {"allow_random_encoder", spec.allow_random_encoder},
            {"input_size", spec.model.input_size},
            {"encoder_features", spec.model.encoder_features},
            {"decoder_features", spec.model.decoder_features},
            {"baseline_features", spec.baseline_model.encoder_features}}},
          {"strategies", strategies},
          {"repeats", spec.repeats},
          {"train", train},
          {"augmentation",
           {{"max_rotation_degrees", a.max_rotation_degrees},
            {"hflip_prob", a.hflip_prob},
            {"vflip_prob", a.vflip_prob},
            {"normalization", to_string(a.normalization)}}},
          {"metrics", {{"averaging", to_string(spec.averaging)}}},
          {"output_dir", spec.output_dir.string()},
          {"base_seed", spec.base_seed}};
}

std::string config_hash(const ExperimentSpec& spec) {
  json j = to_json(spec);
  j.erase("output_dir");  // relocating results must not invalidate them
  const std::string text = j.dump();
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", unsigned(crc32_of(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
  return buf;
}

const SegmentationModelSpec& model_for(const ExperimentSpec& spec, FineTuneStrategy s) {
  return s == FineTuneStrategy::BaselineScratch ? spec.baseline_model : spec.model;
}

std::uint64_t run_seed(const ExperimentSpec& spec, FineTuneStrategy s, int repeat) {
  return spec.base_seed + std::uint64_t(ordinal(s)) * 1000u + std::uint64_t(repeat);
}

std::vector<PlannedRun> plan_runs(const ExperimentSpec& spec) {
  std::vector<PlannedRun> runs;
  for (auto s : spec.strategies)
    for (int r = 0; r < spec.repeats; ++r) runs.push_back({s, r, run_seed(spec, s, r)});
  return runs;
}

json to_json(const RunResult& r) {
  json logs = json::array();
  for (const auto& e : r.epoch_logs) {
    json j = to_json(e);
    j.erase("wall_seconds");
    logs.push_back(j);
  }
  return {{"strategy", to_string(r.strategy)},
          {"repeat_index", r.repeat_index},
          {"metrics", to_json(r.metrics)},
          {"trainable_params", r.trainable_params},
          {"frozen_params", r.frozen_params},
          {"reduction_pct", r.reduction_pct},
          {"epoch_logs", logs},
          {"seed", r.seed},
          {"seed_rule", "base_seed + ordinal(strategy) * 1000 + repeat"},
          {"best_epoch", r.best_epoch},
          {"normalization", r.normalization},
          {"config_hash", r.config_hash}};
}

RunResult run_result_from_json(const json& j) {
  RunResult r;
  r.strategy = parse_strategy(j.at("strategy").get<std::string>());
  r.repeat_index = j.at("repeat_index").get<int>();
  r.metrics = metric_report_from_json(j.at("metrics"));
  r.trainable_params = j.at("trainable_params").get<std::int64_t>();
  r.frozen_params = j.value("frozen_params", std::int64_t(0));
  r.reduction_pct = j.value("reduction_pct", 0.0);
  for (const auto& e : j.value("epoch_logs", json::array())) r.epoch_logs.push_back(epoch_log_from_json(e));
  r.seed = j.value("seed", std::uint64_t(0));
  r.best_epoch = j.value("best_epoch", 0);
  r.normalization = j.value("normalization", "");
  r.config_hash = j.value("config_hash", "");
  return r;
}

fs::path run_directory(const ExperimentSpec& spec, FineTuneStrategy s, int repeat) {
  return spec.output_dir / to_string(s) / std::to_string(repeat);
}

std::pair<std::vector<Sample>, std::vector<Sample>> prepare_data(const ExperimentSpec& spec, int repeat) {
  const auto& d = spec.dataset;
  std::vector<Sample> samples;
  if (d.kind == DatasetKind::HC18 || !d.root.empty())
    samples = load_dataset(d.root);
  else
    samples = synthesize_phantoms(d.phantom_n, d.phantom_seed, d.phantom_size);
  SplitConfig sc = d.split;
  if (d.resplit_per_repeat) sc.seed += std::uint64_t(repeat);
  auto [train, test] = split(std::move(samples), sc);
  const int size = spec.model.input_size;
  auto fit = [size](std::vector<Sample>& v) {
    for (auto& s : v)
      if (s.image.rows() != size || s.image.cols() != size) s = resize(s, size);
  };
  fit(train);
  fit(test);
  return {std::move(train), std::move(test)};
}

namespace {

RunResult execute_run(const ExperimentSpec& spec, const PlannedRun& run, const std::vector<Sample>& train_data,
                      const std::vector<Sample>& test_data, const WeightArchive* weights, const std::string& hash,
                      bool quiet) {
  const fs::path dir = run_directory(spec, run.strategy, run.repeat);
  // No completion marker here, so anything present is debris from an interrupted attempt.
  fs::remove_all(dir);
  fs::create_directories(dir);

  SegmentationModelSpec ms = model_for(spec, run.strategy);
  ms.seed = run.seed;
  auto net = build_network<float>(ms, ms.encoder_pretrained ? weights : nullptr);
  apply(net, run.strategy, ApplyOptions{spec.allow_random_encoder});
  const auto summary = summarize(net, cached_baseline_total());

  TrainConfig cfg = spec.train;
  cfg.seed = run.seed;
  cfg.config_hash = hash;

  std::ofstream epochs(dir / "epochs.jsonl", std::ios::trunc);
  if (!epochs) throw std::runtime_error("cannot write " + (dir / "epochs.jsonl").string());
  auto on_epoch = [&](const EpochLog& e) {
    epochs << to_json(e).dump() << '\n';
    epochs.flush();
    if (!quiet)
      std::cerr << to_string(run.strategy) << "/" << run.repeat << " epoch " << e.epoch << " loss "
                << e.mean_train_loss << " val_dice " << e.val_dice << " (" << e.wall_seconds << " s)\n";
  };
  auto trained = train<float>(net, run.strategy, train_data, test_data, cfg, on_epoch);
  epochs.close();

  restore(net, trained.best);
  const EvalOptions eval{cfg.threshold, cfg.augmentation.normalization, spec.averaging, cfg.eval_batch_size};
  RunResult r;
  r.strategy = run.strategy;
  r.repeat_index = run.repeat;
  r.metrics = evaluate(net, std::span<const Sample>(test_data), eval);
  r.trainable_params = summary.trainable;
  r.frozen_params = summary.frozen;
  r.reduction_pct = summary.reduction_vs_baseline;
  r.epoch_logs = trained.logs;
  r.seed = run.seed;
  r.best_epoch = trained.best.epoch;
  r.normalization = to_string(cfg.augmentation.normalization);
  r.config_hash = hash;

  trained.best.metrics = to_json(r.metrics);
  save_checkpoint(trained.best, dir / "best.ckpt");
  write_file_atomic(dir / "result.json", to_json(r).dump(2) + "\n");  // completion marker, always last
  return r;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentSpec& spec, const RunOptions& options) {
  if (spec.output_dir.empty()) throw SpecError("output_dir", "not set and FTSEG_OUTPUT_DIR is empty");
  ExperimentOutcome out;
  const std::string hash = config_hash(spec);
  fs::create_directories(spec.output_dir);
  {
    json meta = to_json(spec);
    meta["config_hash"] = hash;
    write_file_atomic(spec.output_dir / "experiment.json", meta.dump(2) + "\n");
  }

  std::optional<WeightArchive> weights;
  if (spec.model.encoder_pretrained) weights = load_weight_archive(spec.encoder_weights);

  // Data is shared by every run of a repeat; reload only when splits differ per repeat.
  std::optional<std::pair<std::vector<Sample>, std::vector<Sample>>> data;
  int data_repeat = -1;

  for (const auto& run : plan_runs(spec)) {
    const fs::path marker = run_directory(spec, run.strategy, run.repeat) / "result.json";
    try {
      if (fs::exists(marker)) {
        RunResult prior = run_result_from_json(json::parse(read_file_text(marker)));
        if (prior.config_hash != hash)
          throw std::runtime_error("existing result at " + marker.string() + " comes from a different config (" +
                                   prior.config_hash + " vs " + hash + ")");
        out.results.push_back(std::move(prior));
        ++out.skipped;
        continue;
      }
      if (options.max_new_runs >= 0 && out.executed >= options.max_new_runs) continue;
      const int want = spec.dataset.resplit_per_repeat ? run.repeat : 0;
      if (!data || data_repeat != want) {
        data = prepare_data(spec, want);
        data_repeat = want;
      }
      ++out.executed;
      out.results.push_back(execute_run(spec, run, data->first, data->second, weights ? &*weights : nullptr, hash,
                                        options.quiet));
    } catch (const std::exception& e) {
      out.failures.push_back({run.strategy, run.repeat, e.what()});
      if (!options.quiet) std::cerr << to_string(run.strategy) << "/" << run.repeat << " failed: " << e.what() << "\n";
    }
  }
  return out;
}

std::vector<RunResult> load_results(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("results directory " + dir.string() + " does not exist");
  std::vector<RunResult> results;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "result.json") continue;
    try {
      results.push_back(run_result_from_json(json::parse(read_file_text(entry.path()))));
    } catch (const std::exception& e) {
      throw std::runtime_error("malformed " + entry.path().string() + ": " + e.what());
    }
  }
  std::sort(results.begin(), results.end(), [](const RunResult& a, const RunResult& b) {
    return std::pair(ordinal(a.strategy), a.repeat_index) < std::pair(ordinal(b.strategy), b.repeat_index);
  });
  return results;
}

AggregateTable aggregate(const std::vector<RunResult>& results, const std::vector<FineTuneStrategy>& strategies,
                         int repeats) {
  if (results.empty()) throw std::invalid_argument("aggregate: no results");
  std::vector<FineTuneStrategy> order = strategies;
  if (order.empty()) {
    std::set<int> seen;
    for (const auto& r : results) seen.insert(ordinal(r.strategy));
    for (auto s : kAllStrategies)
      if (seen.count(ordinal(s))) order.push_back(s);
  }
  if (repeats <= 0)
    for (const auto& r : results) repeats = std::max(repeats, r.repeat_index + 1);

  std::map<std::pair<int, int>, const RunResult*> by_key;
  for (const auto& r : results) {
    if (!by_key.emplace(std::pair(ordinal(r.strategy), r.repeat_index), &r).second)
      throw std::invalid_argument("aggregate: duplicate result for " + to_string(r.strategy) + " repeat " +
                                  std::to_string(r.repeat_index));
  }
  std::string missing;
  for (auto s : order)
    for (int k = 0; k < repeats; ++k)
      if (!by_key.count({ordinal(s), k})) missing += " (" + to_string(s) + ", " + std::to_string(k) + ")";
  if (!missing.empty()) throw std::invalid_argument("aggregate: missing results for" + missing);

  auto stat = [](const std::vector<double>& v) {
    MetricStat st;
    for (double x : v) st.mean += x;
    st.mean /= double(v.size());
    if (v.size() > 1) {
      double ss = 0;
      for (double x : v) ss += (x - st.mean) * (x - st.mean);
      st.std = std::sqrt(ss / double(v.size() - 1));
    }
    return st;
  };

  AggregateTable table;
  for (auto s : order) {
    std::vector<double> pa, dc, mi;
    AggregateRow row;
    row.strategy = s;
    row.n = repeats;
    for (int k = 0; k < repeats; ++k) {
      const RunResult& r = *by_key.at({ordinal(s), k});
      pa.push_back(r.metrics.pixel_accuracy);
      dc.push_back(r.metrics.dice);
      mi.push_back(r.metrics.miou);
      row.trainable_params = r.trainable_params;
      row.reduction_pct = r.reduction_pct;
    }
    row.pa = stat(pa);
    row.dice = stat(dc);
    row.miou = stat(mi);
    table.rows.push_back(row);
  }
  return table;
}

json to_json(const AggregateTable& t) {
  json rows = json::array();
  auto st = [](const MetricStat& s) { return json{{"mean", s.mean}, {"std", s.std}}; };
  for (const auto& r : t.rows)
    rows.push_back({{"strategy", to_string(r.strategy)},
                    {"n", r.n},
                    {"pa", st(r.pa)},
                    {"dice", st(r.dice)},
                    {"miou", st(r.miou)},
                    {"trainable_params", r.trainable_params},
                    {"reduction_pct", r.reduction_pct}});
  return {{"rows", rows}, {"std", "sample (n - 1)"}};
}

AggregateTable aggregate_from_json(const json& j) {
  AggregateTable t;
  auto st = [](const json& s) { return MetricStat{s.at("mean").get<double>(), s.at("std").get<double>()}; };
  for (const auto& r : j.at("rows")) {
    AggregateRow row;
    row.strategy = parse_strategy(r.at("strategy").get<std::string>());
    row.n = r.at("n").get<int>();
    row.pa = st(r.at("pa"));
    row.dice = st(r.at("dice"));
    row.miou = st(r.at("miou"));
    row.trainable_params = r.at("trainable_params").get<std::int64_t>();
    row.reduction_pct = r.at("reduction_pct").get<double>();
    t.rows.push_back(row);
  }
  return t;
}

AuditReport audit(const ExperimentSpec& spec) {
  AuditReport rep;
  rep.baseline_total = cached_baseline_total();
  // Weight values are irrelevant to accounting, so nothing is loaded.
  auto build = [](SegmentationModelSpec ms) {
    ms.encoder_pretrained = false;
    return build_network<float>(ms);
  };
  auto net = build(spec.model);
  const auto counts = count_parameters(net, CountFilter::ByGroup);
  rep.model_total = counts.total;
  rep.by_group = counts.by_group;
  std::optional<SegmentationNetwork<float>> baseline;
  for (auto s : spec.strategies) {
    const bool use_baseline = &model_for(spec, s) != &spec.model;
    if (use_baseline && !baseline) baseline.emplace(build(spec.baseline_model));
    auto& target = use_baseline ? *baseline : net;
    AuditRow row;
    row.strategy = s;
    try {
      check_compatible(s, layer_group_ids(target));
    } catch (const ConfigError&) {
      row.compatible = false;
      rep.rows.push_back(row);
      continue;
    }
    apply(target, s, ApplyOptions{true});
    const auto sum = summarize(target, rep.baseline_total);
    row.trainable = sum.trainable;
    row.frozen = sum.frozen;
    row.reduction_pct = sum.reduction_vs_baseline;
    rep.rows.push_back(row);
  }
  return rep;
}

json to_json(const AuditReport& a) {
  json groups = json::object();
  for (const auto& [g, n] : a.by_group) groups[to_string(g)] = n;
  json rows = json::array();
  for (const auto& r : a.rows) {
    json row = {{"strategy", to_string(r.strategy)}, {"compatible", r.compatible}};
    if (r.compatible) {
      row["trainable_params"] = r.trainable;
      row["frozen_params"] = r.frozen;
      row["reduction_pct"] = r.reduction_pct;
    }
    rows.push_back(row);
  }
  return {{"model_total", a.model_total}, {"baseline_total", a.baseline_total}, {"groups", groups}, {"rows", rows}};
}

}  // namespace ftseg

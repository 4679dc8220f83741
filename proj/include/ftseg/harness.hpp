#ifndef FTSEG_HARNESS_HPP
#define FTSEG_HARNESS_HPP

#include "ftseg/data_pipeline.hpp"
#include "ftseg/freeze_policy.hpp"
#include "ftseg/metrics.hpp"
#include "ftseg/network.hpp"
#include "ftseg/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftseg {

inline constexpr int kSchemaVersion = 1;

/// Config validation failure; `path()` is the offending field, e.g. "train.epochs".
class SpecError : public std::runtime_error {
 public:
  SpecError(std::string path, const std::string& msg) : std::runtime_error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

enum class DatasetKind { HC18, Phantom };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Phantom;
  std::filesystem::path root;  // HC18 root, or an on-disk phantom set (optional)
  int phantom_n = 200;
  std::uint64_t phantom_seed = 7;
  int phantom_size = 0;  // 0 = model input size
  SplitConfig split;
  bool resplit_per_repeat = false;
};

struct ExperimentSpec {
  int schema_version = kSchemaVersion;
  DatasetSpec dataset;
  SegmentationModelSpec model;
  /// Architecture for baseline_scratch runs: the plain U-Net at the same input size.
  SegmentationModelSpec baseline_model;
  std::filesystem::path encoder_weights;  // required when model.encoder_pretrained
  bool allow_random_encoder = false;
  std::vector<FineTuneStrategy> strategies;
  int repeats = 4;
  TrainConfig train;
  Averaging averaging = Averaging::Micro;
  std::filesystem::path output_dir;
  std::uint64_t base_seed = 0;
};

struct PlannedRun {
  FineTuneStrategy strategy;
  int repeat = 0;
  std::uint64_t seed = 0;
};

/// Parses and normalises a config document: fills defaults, checks every
/// invariant and strategy/model compatibility. `FTSEG_OUTPUT_DIR` supplies
/// the output directory when the config has none. Relative paths resolve
/// against `base_dir`.
ExperimentSpec validate_spec(const nlohmann::json& config, const std::filesystem::path& base_dir = {});
ExperimentSpec load_spec(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentSpec& spec);

/// Stable digest of the normalised spec (hex CRC-32 of its canonical JSON).
std::string config_hash(const ExperimentSpec& spec);

/// The architecture a strategy trains: baseline_model for baseline_scratch, model otherwise.
const SegmentationModelSpec& model_for(const ExperimentSpec& spec, FineTuneStrategy s);

/// Per-run seed: base_seed + ordinal(strategy) * 1000 + repeat.
std::uint64_t run_seed(const ExperimentSpec& spec, FineTuneStrategy s, int repeat);
std::vector<PlannedRun> plan_runs(const ExperimentSpec& spec);

struct RunResult {
  FineTuneStrategy strategy = FineTuneStrategy::BaselineScratch;
  int repeat_index = 0;
  MetricReport metrics;
  std::int64_t trainable_params = 0;
  std::int64_t frozen_params = 0;
  double reduction_pct = 0;
  std::vector<EpochLog> epoch_logs;  // wall time omitted so reruns compare equal
  std::uint64_t seed = 0;
  int best_epoch = 0;
  std::string normalization;
  std::string config_hash;
};

nlohmann::json to_json(const RunResult& r);
RunResult run_result_from_json(const nlohmann::json& j);

std::filesystem::path run_directory(const ExperimentSpec& spec, FineTuneStrategy s, int repeat);

struct RunFailure {
  FineTuneStrategy strategy;
  int repeat = 0;
  std::string message;
};

struct ExperimentOutcome {
  std::vector<RunResult> results;  // every completed run, in plan order
  int executed = 0;                // runs trained by this invocation
  int skipped = 0;                 // runs already complete on disk
  std::vector<RunFailure> failures;
};

struct RunOptions {
  /// Stop after training this many runs (simulates an interrupted grid); -1 = no limit.
  int max_new_runs = -1;
  bool quiet = true;
};

/// Loads, splits and resizes the dataset described by the spec for one repeat.
std::pair<std::vector<Sample>, std::vector<Sample>> prepare_data(const ExperimentSpec& spec, int repeat);

/// Executes every planned run not yet completed under output_dir. Each run
/// directory receives epochs.jsonl, best.ckpt and finally result.json (the
/// completion marker, written atomically).
ExperimentOutcome run_experiment(const ExperimentSpec& spec, const RunOptions& options = {});

/// Reads every result.json below `dir`.
std::vector<RunResult> load_results(const std::filesystem::path& dir);

struct MetricStat {
  double mean = 0, std = 0;
  bool operator==(const MetricStat&) const = default;
};

struct AggregateRow {
  FineTuneStrategy strategy = FineTuneStrategy::BaselineScratch;
  int n = 0;
  MetricStat pa, dice, miou;
  std::int64_t trainable_params = 0;
  double reduction_pct = 0;
  bool operator==(const AggregateRow&) const = default;
};

struct AggregateTable {
  std::vector<AggregateRow> rows;
  bool operator==(const AggregateTable&) const = default;
};

/// Per-strategy mean and sample standard deviation. With `strategies` and
/// `repeats` given, rows follow that order and incomplete groups are an error.
AggregateTable aggregate(const std::vector<RunResult>& results, const std::vector<FineTuneStrategy>& strategies = {},
                         int repeats = 0);

nlohmann::json to_json(const AggregateTable& t);
AggregateTable aggregate_from_json(const nlohmann::json& j);
std::string to_csv(const AggregateTable& t);

struct LiteratureRow {
  std::string source;
  std::string method;
  std::optional<double> pa, dice, miou;  // percent
  std::optional<std::int64_t> trainable_params;
};

std::vector<LiteratureRow> load_literature(const std::filesystem::path& path);
std::filesystem::path default_literature_path();

std::string to_markdown(const AggregateTable& t, const std::vector<LiteratureRow>& literature = {});

struct ReportFormats {
  bool markdown = false;
  bool png = false;
  std::optional<std::filesystem::path> literature;
};

/// Writes aggregate.csv and aggregate.json, plus aggregate.md / aggregate.png on request.
std::vector<std::filesystem::path> emit_report(const AggregateTable& table, const std::filesystem::path& dir,
                                               const ReportFormats& formats = {});

struct AuditRow {
  FineTuneStrategy strategy;
  bool compatible = true;
  std::int64_t trainable = 0;
  std::int64_t frozen = 0;
  double reduction_pct = 0;
};

struct AuditReport {
  std::int64_t model_total = 0;
  std::int64_t baseline_total = 0;
  std::map<LayerGroupId, std::int64_t> by_group;
  std::vector<AuditRow> rows;
};

/// Parameter accounting for every strategy in the spec; no training, no weights needed.
AuditReport audit(const ExperimentSpec& spec);
nlohmann::json to_json(const AuditReport& a);

}  // namespace ftseg

#endif  // FTSEG_HARNESS_HPP

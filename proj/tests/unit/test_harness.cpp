#include "ftseg/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace ftseg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json full_grid_config() {
  return {{"dataset", {{"kind", "phantom"}, {"phantom", {{"n", 20}, {"size", 64}}}}},
          {"model", {{"encoder", "mobilenet_v2"}, {"pretrained", false}, {"allow_random_encoder", true}, {"input_size", 64}}},
          {"strategies", "all"},
          {"repeats", 4}};
}

json smoke_config(const fs::path& out) {
  return {{"dataset", {{"kind", "phantom"}, {"phantom", {{"n", 60}, {"seed", 3}, {"size", 64}}}}},
          {"model",
           {{"encoder", "baseline_unet"},
            {"allow_random_encoder", true},
            {"input_size", 64},
            {"encoder_features", {8, 16}},
            {"baseline_features", {8, 16}}}},
          {"strategies", {"baseline_scratch", "decoder_all"}},
          {"repeats", 2},
          {"train", {{"epochs", 2}, {"batch_size", 8}, {"lr_initial", 3e-3}}},
          {"output_dir", out.string()},
          {"base_seed", 100}};
}

std::string spec_error_path(const json& j) {
  try {
    validate_spec(j);
  } catch (const SpecError& e) {
    return e.path();
  }
  return "<no error>";
}

RunResult fake_result(FineTuneStrategy s, int repeat, double pa, double dice, double miou) {
  RunResult r;
  r.strategy = s;
  r.repeat_index = repeat;
  r.metrics.pixel_accuracy = pa;
  r.metrics.dice = dice;
  r.metrics.miou = miou;
  r.trainable_params = 100;
  r.reduction_pct = 50;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ftseg_harness_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Spec, AllStrategiesTimesFourRepeatsPlansThirtyTwoRuns) {
  const auto spec = validate_spec(full_grid_config());
  EXPECT_EQ(spec.strategies.size(), 8u);
  const auto plan = plan_runs(spec);
  ASSERT_EQ(plan.size(), 32u);
  std::set<std::uint64_t> seeds;
  for (const auto& r : plan) seeds.insert(r.seed);
  EXPECT_EQ(seeds.size(), 32u);
  EXPECT_EQ(plan.front().strategy, FineTuneStrategy::BaselineScratch);
}

TEST(Spec, SeedsFollowTheDocumentedRule) {
  auto j = full_grid_config();
  j["base_seed"] = 5;
  const auto spec = validate_spec(j);
  EXPECT_EQ(run_seed(spec, FineTuneStrategy::BaselineScratch, 0), 5u);
  EXPECT_EQ(run_seed(spec, FineTuneStrategy::Decoder4, 3), 5u + 7000u + 3u);
}

TEST(Spec, BaselineScratchUsesThePlainUNet) {
  const auto spec = validate_spec(full_grid_config());
  EXPECT_EQ(model_for(spec, FineTuneStrategy::BaselineScratch).encoder_kind, EncoderKind::BaselineUNet);
  EXPECT_EQ(model_for(spec, FineTuneStrategy::DecoderAll).encoder_kind, EncoderKind::MobileNetV2);
}

TEST(Spec, ErrorsCarryTheFieldPath) {
  auto j = full_grid_config();
  j["repeats"] = 0;
  EXPECT_EQ(spec_error_path(j), "repeats");

  j = full_grid_config();
  j["train"] = {{"epochs", 0}};
  EXPECT_EQ(spec_error_path(j).rfind("train", 0), 0u);

  j = full_grid_config();
  j["model"]["input_size"] = 500;
  EXPECT_EQ(spec_error_path(j), "model.input_size");

  j = full_grid_config();
  j["model"]["colour"] = true;
  EXPECT_EQ(spec_error_path(j), "model.colour");

  j = full_grid_config();
  j["strategies"] = {"decoder_all", "decoder_all"};
  EXPECT_EQ(spec_error_path(j), "strategies");

  j = full_grid_config();
  j["dataset"] = {{"kind", "hc18"}};
  EXPECT_EQ(spec_error_path(j), "dataset.root");
}

TEST(Spec, Decoder4OnTheBaselineIsIncompatible) {
  auto j = full_grid_config();
  j["model"] = {{"encoder", "baseline_unet"}, {"input_size", 64}, {"allow_random_encoder", true}};
  j["strategies"] = {"decoder_4"};
  EXPECT_THROW(validate_spec(j), SpecError);
  j["strategies"] = {"decoder_0_1"};
  EXPECT_NO_THROW(validate_spec(j));
}

TEST(Spec, PretrainedStrategiesNeedWeightsOrExplicitOverride) {
  auto j = full_grid_config();
  j["model"].erase("allow_random_encoder");
  EXPECT_THROW(validate_spec(j), SpecError);
  j["strategies"] = {"baseline_scratch"};
  EXPECT_NO_THROW(validate_spec(j));
  j["model"]["pretrained"] = true;
  EXPECT_EQ(spec_error_path(j), "model.weights");
}

TEST(Spec, JsonRoundTripAndHashIgnoreOutputDir) {
  auto j = smoke_config("/tmp/a");
  const auto a = validate_spec(j);
  const auto again = validate_spec(to_json(a));
  EXPECT_EQ(to_json(again), to_json(a));
  j["output_dir"] = "/tmp/b";
  EXPECT_EQ(config_hash(validate_spec(j)), config_hash(a));
  j["train"]["epochs"] = 3;
  EXPECT_NE(config_hash(validate_spec(j)), config_hash(a));
}

TEST(Spec, RelativePathsResolveAgainstTheConfigDirectory) {
  const auto dir = scratch("relpaths");
  fs::create_directories(dir / "cfg");
  auto j = smoke_config("out");
  std::ofstream(dir / "cfg" / "c.json") << j.dump();
  EXPECT_EQ(load_spec(dir / "cfg" / "c.json").output_dir, dir / "cfg" / "out");
  fs::remove_all(dir);
}

TEST(Aggregate, MeanAndSampleStd) {
  const auto t = aggregate({fake_result(FineTuneStrategy::DecoderAll, 0, 0.9, 0.96, 0.9),
                            fake_result(FineTuneStrategy::DecoderAll, 1, 0.9, 0.98, 0.9)});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_DOUBLE_EQ(t.rows[0].dice.mean, 0.97);
  EXPECT_NEAR(t.rows[0].dice.std, 0.0141421356, 1e-9);
  EXPECT_EQ(t.rows[0].pa.std, 0.0);
  EXPECT_EQ(t.rows[0].n, 2);
}

TEST(Aggregate, IdenticalRepeatsHaveZeroStd) {
  std::vector<RunResult> rs;
  for (int r = 0; r < 4; ++r) rs.push_back(fake_result(FineTuneStrategy::Decoder0, r, 0.5, 0.6, 0.7));
  const auto t = aggregate(rs);
  EXPECT_EQ(t.rows[0].dice.std, 0.0);
  EXPECT_DOUBLE_EQ(t.rows[0].miou.mean, 0.7);
}

TEST(Aggregate, RowsFollowCanonicalOrder) {
  const auto t = aggregate({fake_result(FineTuneStrategy::Decoder4, 0, 1, 1, 1),
                            fake_result(FineTuneStrategy::BaselineScratch, 0, 1, 1, 1),
                            fake_result(FineTuneStrategy::DecoderAll, 0, 1, 1, 1)});
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[0].strategy, FineTuneStrategy::BaselineScratch);
  EXPECT_EQ(t.rows[1].strategy, FineTuneStrategy::DecoderAll);
  EXPECT_EQ(t.rows[2].strategy, FineTuneStrategy::Decoder4);
}

TEST(Aggregate, EmptyDuplicateAndMissingAreErrors) {
  EXPECT_ANY_THROW(aggregate({}));
  EXPECT_ANY_THROW(aggregate({fake_result(FineTuneStrategy::Decoder0, 0, 1, 1, 1),
                              fake_result(FineTuneStrategy::Decoder0, 0, 1, 1, 1)}));
  try {
    aggregate({fake_result(FineTuneStrategy::Decoder0, 0, 1, 1, 1)}, {FineTuneStrategy::Decoder0, FineTuneStrategy::Decoder4},
              2);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("decoder_0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("decoder_4"), std::string::npos) << msg;
  }
}

TEST(Aggregate, JsonAndCsvRoundTrip) {
  std::vector<RunResult> rs;
  for (auto s : {FineTuneStrategy::BaselineScratch, FineTuneStrategy::DecoderAll, FineTuneStrategy::EncoderAll})
    for (int r = 0; r < 3; ++r) rs.push_back(fake_result(s, r, 0.9 + 0.01 * r, 0.8 + 0.02 * r, 0.7 + 0.03 * r));
  const auto t = aggregate(rs);
  EXPECT_EQ(aggregate_from_json(to_json(t)), t);
  const auto csv = to_csv(t);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "strategy,n,pa_mean,pa_std,dice_mean,dice_std,miou_mean,miou_std,trainable_params,reduction_pct");
}

TEST(Report, MarkdownIncludesLiteratureRowsSeparately) {
  const auto t = aggregate({fake_result(FineTuneStrategy::DecoderAll, 0, 0.97, 0.95, 0.93)});
  const auto lit = load_literature(fs::path(FTSEG_SOURCE_DIR) / "data" / "literature.json");
  ASSERT_FALSE(lit.empty());
  const auto md = to_markdown(t, lit);
  EXPECT_NE(md.find("decoder_all"), std::string::npos);
  EXPECT_NE(md.find("95.1"), std::string::npos);
  EXPECT_NE(md.find("not recomputed"), std::string::npos);
}

TEST(Report, EmitWritesRequestedFiles) {
  const auto dir = scratch("emit");
  const auto t = aggregate({fake_result(FineTuneStrategy::DecoderAll, 0, 0.97, 0.95, 0.93),
                            fake_result(FineTuneStrategy::Decoder0, 0, 0.96, 0.90, 0.88)});
  const auto plain = emit_report(t, dir);
  EXPECT_EQ(plain.size(), 2u);
  const auto all = emit_report(t, dir, ReportFormats{true, true, std::nullopt});
  EXPECT_EQ(all.size(), 4u);
  for (const auto& p : all) EXPECT_GT(fs::file_size(p), 0u) << p;
  EXPECT_ANY_THROW(emit_report(AggregateTable{}, dir));
  fs::remove_all(dir);
}

TEST(Audit, DecoderAllAtFullScale) {
  auto j = full_grid_config();
  j["model"]["input_size"] = 512;
  const auto a = audit(validate_spec(j));
  EXPECT_EQ(a.baseline_total, 31037633);
  for (const auto& row : a.rows) {
    if (row.strategy == FineTuneStrategy::DecoderAll) {
      EXPECT_EQ(row.trainable, 4404945);
      EXPECT_DOUBLE_EQ(row.reduction_pct, 85.8);
    }
    if (row.strategy == FineTuneStrategy::BaselineScratch) EXPECT_DOUBLE_EQ(row.reduction_pct, 0.0);
  }
  EXPECT_EQ(a.rows.size(), 8u);
}

TEST(Experiment, PhantomSmokeRunThenResume) {
  const auto out = scratch("smoke");
  const auto spec = validate_spec(smoke_config(out));
  const auto first = run_experiment(spec);
  EXPECT_TRUE(first.failures.empty()) << first.failures.front().message;
  EXPECT_EQ(first.executed, 4);
  ASSERT_EQ(first.results.size(), 4u);

  for (const auto& r : plan_runs(spec)) {
    const auto dir = run_directory(spec, r.strategy, r.repeat);
    EXPECT_TRUE(fs::exists(dir / "result.json")) << dir;
    EXPECT_TRUE(fs::exists(dir / "best.ckpt")) << dir;
    EXPECT_TRUE(fs::exists(dir / "epochs.jsonl")) << dir;
  }
  const auto audited = audit(spec);
  for (const auto& r : first.results) {
    EXPECT_EQ(r.config_hash, config_hash(spec));
    EXPECT_EQ(r.epoch_logs.size(), 2u);
    EXPECT_GE(r.metrics.dice, 0.0);
    EXPECT_LE(r.metrics.dice, 1.0);
    EXPECT_EQ(r.seed, run_seed(spec, r.strategy, r.repeat_index));
    for (const auto& row : audited.rows)
      if (row.strategy == r.strategy) {
        EXPECT_EQ(row.trainable, r.trainable_params) << to_string(r.strategy);
        EXPECT_EQ(row.frozen, r.frozen_params) << to_string(r.strategy);
      }
  }

  const auto again = run_experiment(spec);
  EXPECT_EQ(again.executed, 0);
  EXPECT_EQ(again.skipped, 4);
  const auto loaded = load_results(out);
  EXPECT_EQ(loaded.size(), 4u);
  EXPECT_EQ(aggregate(loaded), aggregate(first.results));
  fs::remove_all(out);
}

TEST(Experiment, ChangedConfigDoesNotReuseStaleResults) {
  const auto out = scratch("stale");
  auto j = smoke_config(out);
  j["strategies"] = {"decoder_all"};
  j["repeats"] = 1;
  j["train"]["epochs"] = 1;
  run_experiment(validate_spec(j));
  j["train"]["epochs"] = 2;
  const auto second = run_experiment(validate_spec(j));
  EXPECT_EQ(second.executed, 0);
  ASSERT_EQ(second.failures.size(), 1u);
  EXPECT_NE(second.failures[0].message.find("config"), std::string::npos) << second.failures[0].message;
  fs::remove_all(out);
}

TEST(Experiment, MissingOutputDirIsAnError) {
  auto j = smoke_config("");
  j.erase("output_dir");
  const auto spec = validate_spec(j);
  if (std::getenv("FTSEG_OUTPUT_DIR")) GTEST_SKIP() << "FTSEG_OUTPUT_DIR set in the environment";
  EXPECT_THROW(run_experiment(spec), SpecError);
}

// ftseg: experiment runner, parameter audit, reporting and data utilities.

#include "ftseg/harness.hpp"
#include "ftseg/io_util.hpp"
#include "ftseg/weight_convert.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int fail(const std::string& kind, const std::string& message, json extra = json::object()) {
  json err = {{"error", kind}, {"message", message}};
  err.update(extra);
  std::cerr << err.dump() << '\n';
  return kind == "usage" ? 2 : 1;
}

int cmd_run(const fs::path& config, int max_runs, bool verbose) {
  const auto spec = ftseg::load_spec(config);
  const auto outcome = ftseg::run_experiment(spec, {max_runs, !verbose});
  json failures = json::array();
  for (const auto& f : outcome.failures)
    failures.push_back({{"strategy", ftseg::to_string(f.strategy)}, {"repeat", f.repeat}, {"message", f.message}});
  std::cout << json{{"output_dir", spec.output_dir.string()},
                    {"executed", outcome.executed},
                    {"skipped", outcome.skipped},
                    {"completed", outcome.results.size()},
                    {"planned", ftseg::plan_runs(spec).size()},
                    {"failures", failures}}
                   .dump(2)
            << '\n';
  if (!outcome.failures.empty()) return fail("run_failed", std::to_string(outcome.failures.size()) + " run(s) failed");
  const bool complete = outcome.results.size() == ftseg::plan_runs(spec).size();
  if (complete) {
    const auto table = ftseg::aggregate(outcome.results, spec.strategies, spec.repeats);
    ftseg::emit_report(table, spec.output_dir);
  }
  return 0;
}

int cmd_audit(const fs::path& config, bool as_json) {
  const auto spec = ftseg::load_spec(config);
  const auto rep = ftseg::audit(spec);
  if (as_json) {
    std::cout << ftseg::to_json(rep).dump(2) << '\n';
    return 0;
  }
  std::printf("model total parameters:    %lld\n", (long long)rep.model_total);
  std::printf("baseline U-Net parameters: %lld\n\n", (long long)rep.baseline_total);
  std::printf("%-16s %14s %14s %10s\n", "strategy", "trainable", "frozen", "reduction");
  for (const auto& r : rep.rows) {
    if (!r.compatible) {
      std::printf("%-16s %14s\n", ftseg::to_string(r.strategy).c_str(), "incompatible");
      continue;
    }
    std::printf("%-16s %14lld %14lld %9.1f%%\n", ftseg::to_string(r.strategy).c_str(), (long long)r.trainable,
                (long long)r.frozen, r.reduction_pct);
  }
  return 0;
}

int cmd_report(const fs::path& dir, const fs::path& out, bool markdown, bool png, const std::string& literature,
               bool no_literature) {
  const auto results = ftseg::load_results(dir);
  std::vector<ftseg::FineTuneStrategy> order;
  int repeats = 0;
  if (fs::exists(dir / "experiment.json")) {
    const auto meta = json::parse(ftseg::read_file_text(dir / "experiment.json"));
    for (const auto& s : meta.at("strategies")) order.push_back(ftseg::parse_strategy(s.get<std::string>()));
    repeats = meta.at("repeats").get<int>();
  }
  const auto table = ftseg::aggregate(results, order, repeats);
  ftseg::ReportFormats formats;
  formats.markdown = markdown;
  formats.png = png;
  if (!no_literature) formats.literature = literature.empty() ? ftseg::default_literature_path() : fs::path(literature);
  for (const auto& p : ftseg::emit_report(table, out.empty() ? dir : out, formats)) std::cout << p.string() << '\n';
  return 0;
}

int cmd_synth(int n, std::uint64_t seed, int size, const fs::path& out) {
  const auto samples = ftseg::synthesize_phantoms(n, seed, size);
  ftseg::save_dataset(samples, out);
  std::cout << json{{"samples", n}, {"seed", seed}, {"size", size}, {"root", out.string()}}.dump() << '\n';
  return 0;
}

int cmd_convert(const fs::path& src, const fs::path& dst) {
  ftseg::ConversionReport report;
  const auto converted = ftseg::convert_mobilenet_archive(ftseg::load_weight_archive(src), &report);
  // Refuse archives the network would reject, before writing anything.
  ftseg::build_mobilenet_unet<float>(ftseg::SegmentationModelSpec::mobilenet(true), &converted);
  ftseg::save_weight_archive(converted, dst);
  json renamed = json::object();
  for (const auto& [from, to] : report.renamed) renamed[from] = to;
  const json sidecar = {{"source", src.string()}, {"renamed", renamed}, {"skipped", report.skipped}};
  fs::path side = dst;
  side += ".json";
  ftseg::write_file_atomic(side, sidecar.dump(2) + "\n");
  std::cout << json{{"tensors", converted.size()}, {"skipped", report.skipped.size()}, {"sidecar", side.string()}}.dump()
            << '\n';
  return 0;
}

int cmd_export_encoder(const fs::path& ckpt_path, const fs::path& dst) {
  const auto ckpt = ftseg::load_checkpoint(ckpt_path);
  ftseg::WeightArchive out;
  for (const auto& t : ckpt.tensors.tensors())
    if (t.name.rfind("encoder.", 0) == 0) out.add(t);
  if (out.size() == 0) return fail("export_failed", "checkpoint holds no encoder tensors");
  out.metadata() = {{"encoder", "mobilenet_v2"}, {"source_checkpoint", ckpt_path.string()}, {"epoch", ckpt.epoch}};
  ftseg::save_weight_archive(out, dst);
  std::cout << json{{"tensors", out.size()}, {"path", dst.string()}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fine-tuning experiments for U-Net segmentation"};
  app.require_subcommand(1);

  std::string config, dir, out, literature, src, dst;
  int max_runs = -1;
  bool verbose = false, as_json = false, markdown = false, png = false, no_literature = false;
  int n = 200, size = 128;
  std::uint64_t seed = 7;

  auto* run = app.add_subcommand("run", "Train and evaluate every planned run (resumable)");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  run->add_option("--max-runs", max_runs, "Stop after training this many new runs");
  run->add_flag("-v,--verbose", verbose, "Log each epoch to stderr");

  auto* aud = app.add_subcommand("audit", "Trainable/frozen parameter accounting per strategy");
  aud->add_option("config", config, "Experiment config (JSON)")->required();
  aud->add_flag("--json", as_json, "Emit JSON instead of a table");

  auto* rep = app.add_subcommand("report", "Aggregate result.json files into tables and charts");
  rep->add_option("results_dir", dir, "Experiment output directory")->required();
  rep->add_option("-o,--out", out, "Destination directory (default: results_dir)");
  rep->add_flag("--markdown", markdown, "Also write aggregate.md");
  rep->add_flag("--png", png, "Also write aggregate.png");
  rep->add_option("--literature", literature, "Literature reference file");
  rep->add_flag("--no-literature", no_literature, "Omit literature rows");

  auto* syn = app.add_subcommand("synth", "Write a phantom dataset in the HC18 layout");
  syn->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  syn->add_option("--seed", seed, "Generator seed");
  syn->add_option("--size", size, "Image side (multiple of 32)");
  syn->add_option("--out", out, "Dataset root")->required();

  auto* conv = app.add_subcommand("convert-weights", "Rename a torchvision MobileNetV2 archive to encoder names");
  conv->add_option("src", src, "torchvision-keyed weight archive")->required()->check(CLI::ExistingFile);
  conv->add_option("dst", dst, "Output archive")->required();

  auto* exp = app.add_subcommand("export-encoder", "Extract encoder weights from a checkpoint");
  exp->add_option("checkpoint", src, "Checkpoint file")->required()->check(CLI::ExistingFile);
  exp->add_option("dst", dst, "Output archive")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*run) return cmd_run(config, max_runs, verbose);
    if (*aud) return cmd_audit(config, as_json);
    if (*rep) return cmd_report(dir, out, markdown, png, literature, no_literature);
    if (*syn) return cmd_synth(n, seed, size, out);
    if (*conv) return cmd_convert(src, dst);
    if (*exp) return cmd_export_encoder(src, dst);
  } catch (const ftseg::SpecError& e) {
    return fail("config", e.what(), {{"field", e.path()}});
  } catch (const ftseg::ArchiveError& e) {
    return fail("archive", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return 0;
}

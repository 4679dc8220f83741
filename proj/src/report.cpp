#include "ftseg/harness.hpp"
#include "ftseg/image_io.hpp"
#include "ftseg/io_util.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace ftseg {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pct(const MetricStat& s) { return fixed(100 * s.mean, 2) + " ± " + fixed(100 * s.std, 2); }

std::string opt_pct(const std::optional<double>& v) { return v ? fixed(*v, 2) : "–"; }

// Grouped bars (PA, Dice, mIoU) per strategy on a [0, 1] axis, with ±1 std whiskers.
void render_chart(const AggregateTable& t, const fs::path& path) {
  constexpr int kBar = 14, kGap = 18, kPad = 24, kHeight = 320;
  const int groups = int(t.rows.size());
  const int width = 2 * kPad + groups * (3 * kBar + kGap);
  Raster r = Raster::Constant(kHeight, width, 255.f), g = r, b = r;
  const std::array<std::array<float, 3>, 3> colours = {{{55, 110, 180}, {230, 120, 40}, {70, 160, 80}}};
  const int base = kHeight - kPad, top = kPad;
  auto y_of = [&](double v) { return base - int(std::lround(std::clamp(v, 0.0, 1.0) * (base - top))); };
  auto fill = [&](int x0, int x1, int y0, int y1, const std::array<float, 3>& c) {
    x0 = std::clamp(x0, 0, width - 1), x1 = std::clamp(x1, 0, width - 1);
    y0 = std::clamp(y0, 0, kHeight - 1), y1 = std::clamp(y1, 0, kHeight - 1);
    if (y0 > y1) std::swap(y0, y1);
    r.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1) = c[0];
    g.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1) = c[1];
    b.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1) = c[2];
  };
  const std::array<float, 3> black = {0, 0, 0}, grid = {220, 220, 220};
  for (int k = 1; k <= 10; ++k) fill(kPad, width - kPad, y_of(0.1 * k), y_of(0.1 * k), grid);
  fill(kPad, width - kPad, base, base, black);
  fill(kPad, kPad, top, base, black);
  for (int i = 0; i < groups; ++i) {
    const auto& row = t.rows[std::size_t(i)];
    const MetricStat* stats[3] = {&row.pa, &row.dice, &row.miou};
    const int x = kPad + kGap / 2 + i * (3 * kBar + kGap);
    for (int m = 0; m < 3; ++m) {
      const int x0 = x + m * kBar, x1 = x0 + kBar - 2;
      fill(x0, x1, y_of(stats[m]->mean), base - 1, colours[std::size_t(m)]);
      const int mid = (x0 + x1) / 2;
      const int hi = y_of(stats[m]->mean + stats[m]->std), lo = y_of(stats[m]->mean - stats[m]->std);
      fill(mid, mid, hi, lo, black);
      fill(mid - 3, mid + 3, hi, hi, black);
      fill(mid - 3, mid + 3, lo, lo, black);
    }
  }
  write_png_rgb(path, r, g, b);
}

}  // namespace

std::string to_csv(const AggregateTable& t) {
  std::ostringstream out;
  out << "strategy,n,pa_mean,pa_std,dice_mean,dice_std,miou_mean,miou_std,trainable_params,reduction_pct\n";
  out.precision(10);
  for (const auto& r : t.rows)
    out << to_string(r.strategy) << ',' << r.n << ',' << r.pa.mean << ',' << r.pa.std << ',' << r.dice.mean << ','
        << r.dice.std << ',' << r.miou.mean << ',' << r.miou.std << ',' << r.trainable_params << ','
        << fixed(r.reduction_pct, 1) << '\n';
  return out.str();
}

fs::path default_literature_path() { return fs::path(FTSEG_DATA_DIR) / "literature.json"; }

std::vector<LiteratureRow> load_literature(const fs::path& path) {
  const json j = json::parse(read_file_text(path));
  std::vector<LiteratureRow> rows;
  for (const auto& e : j.at("rows")) {
    LiteratureRow r;
    r.source = e.at("source").get<std::string>();
    r.method = e.value("method", "");
    auto num = [&](const char* key) -> std::optional<double> {
      if (!e.contains(key)) return std::nullopt;
      return e.at(key).get<double>();
    };
    r.pa = num("pa");
    r.dice = num("dice");
    r.miou = num("miou");
    if (e.contains("trainable_params")) r.trainable_params = e.at("trainable_params").get<std::int64_t>();
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string to_markdown(const AggregateTable& t, const std::vector<LiteratureRow>& literature) {
  std::ostringstream out;
  out << "| Strategy | n | PA (%) | Dice (%) | mIoU (%) | Trainable params | Reduction (%) |\n"
      << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : t.rows)
    out << "| " << to_string(r.strategy) << " | " << r.n << " | " << pct(r.pa) << " | " << pct(r.dice) << " | "
        << pct(r.miou) << " | " << r.trainable_params << " | " << fixed(r.reduction_pct, 1) << " |\n";
  out << "\nMean ± sample std over repeats. The 1x1 head is trainable under every strategy.\n";
  const bool partial_decoder = std::any_of(t.rows.begin(), t.rows.end(), [](const AggregateRow& r) {
    return r.strategy != FineTuneStrategy::BaselineScratch && r.strategy != FineTuneStrategy::DecoderAll &&
           r.strategy != FineTuneStrategy::EncoderAll;
  });
  if (partial_decoder)
    out << "Decoder blocks outside a decoder_* strategy's set are frozen at their random initialisation.\n";
  if (!literature.empty()) {
    out << "\nLiterature (reported values, not recomputed):\n\n"
        << "| Source | Method | PA (%) | Dice (%) | mIoU (%) | Trainable params |\n"
        << "|---|---|---|---|---|---|\n";
    for (const auto& l : literature)
      out << "| " << l.source << " | " << l.method << " | " << opt_pct(l.pa) << " | " << opt_pct(l.dice) << " | "
          << opt_pct(l.miou) << " | " << (l.trainable_params ? std::to_string(*l.trainable_params) : "–") << " |\n";
  }
  return out.str();
}

std::vector<fs::path> emit_report(const AggregateTable& table, const fs::path& dir, const ReportFormats& formats) {
  if (table.rows.empty()) throw std::invalid_argument("emit_report: empty table");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());

  std::vector<fs::path> written;
  auto put = [&](const fs::path& p, const std::string& text) {
    write_file_atomic(p, text);
    written.push_back(p);
  };
  put(dir / "aggregate.csv", to_csv(table));
  put(dir / "aggregate.json", to_json(table).dump(2) + "\n");
  if (formats.markdown) {
    std::vector<LiteratureRow> lit;
    if (formats.literature) lit = load_literature(*formats.literature);
    put(dir / "aggregate.md", to_markdown(table, lit));
  }
  if (formats.png) {
    render_chart(table, dir / "aggregate.png");
    written.push_back(dir / "aggregate.png");
  }
  return written;
}

}  // namespace ftseg

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedpe/aggregate.hpp"
#include "fedpe/corpus_io.hpp"
#include "fedpe/errors.hpp"
#include "fedpe/fedcore.hpp"
#include "fedpe/fpe.hpp"
#include "fedpe/kv.hpp"

namespace fedpe {

// Shortest round-trip decimal form via to_chars: the same double always
// prints the same bytes, which is what the byte-identical-rerun
// contract rests on. Infinities print as inf/-inf.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r')
    fields.back().pop_back();
  return fields;
}

inline constexpr const char* kReportsHeader =
    "client_id,base_acc,pers_acc,delta,n_train_tokens,n_test_tokens";

inline std::string reports_to_csv(std::span<const MetricReport> reports) {
  std::string out = kReportsHeader;
  out += '\n';
  for (const auto& r : reports) {
    out += r.client_id;
    out += ',';
    out += format_double(r.baseline_accuracy);
    out += ',';
    out += format_double(r.personalized_accuracy);
    out += ',';
    out += format_double(r.delta);
    out += ',';
    out += std::to_string(r.train_tokens);
    out += ',';
    out += std::to_string(r.test_tokens);
    out += '\n';
  }
  return out;
}

inline void write_reports_csv(const std::filesystem::path& path,
                              std::span<const MetricReport> reports) {
  atomic_write(path, reports_to_csv(reports));
}

inline std::vector<MetricReport> read_reports_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open reports: " + path.string());
  std::string line;
  std::int64_t lineno = 0;
  if (!std::getline(in, line))
    throw ConfigError(path.string() + ": empty file (header expected)");
  ++lineno;
  {
    auto header = split_csv_line(line);
    auto expect = split_csv_line(kReportsHeader);
    if (header != expect)
      throw ConfigError(path.string() + ":1: bad header, expected `" +
                        std::string(kReportsHeader) + "`");
  }
  std::vector<MetricReport> reports;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto fields = split_csv_line(line);
    if (fields.size() != 6)
      throw ConfigError(where + ": expected 6 fields, got " +
                        std::to_string(fields.size()));
    MetricReport r;
    r.client_id = fields[0];
    r.baseline_accuracy = parse_f64(fields[1], where + " base_acc");
    r.personalized_accuracy = parse_f64(fields[2], where + " pers_acc");
    r.delta = parse_f64(fields[3], where + " delta");
    r.train_tokens = parse_i64(fields[4], where + " n_train_tokens");
    r.test_tokens = parse_i64(fields[5], where + " n_test_tokens");
    reports.push_back(std::move(r));
  }
  return reports;
}

// bucket_low,bucket_high,count with explicit underflow/overflow rows at
// -inf/inf so the rows always account for every input value.
inline std::string histogram_to_csv(const Histogram& h) {
  std::string out = "bucket_low,bucket_high,count\n";
  out += "-inf," + format_double(h.spec.edges.front()) + "," +
         std::to_string(h.underflow) + "\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out += format_double(h.spec.edges[i]) + "," +
           format_double(h.spec.edges[i + 1]) + "," +
           std::to_string(h.counts[i]) + "\n";
  out += format_double(h.spec.edges.back()) + ",inf," +
         std::to_string(h.overflow) + "\n";
  return out;
}

inline void write_histogram_csv(const std::filesystem::path& path,
                                const Histogram& h) {
  atomic_write(path, histogram_to_csv(h));
}

inline std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

inline std::string slice_to_csv(const SliceTable& table) {
  std::string out = "key,bucket_low,bucket_high,n,mean_base,mean_pers,mean_delta\n";
  const char* key = slice_key_name(table.spec.key);
  for (const auto& b : table.buckets) {
    out += key;
    out += ',';
    out += format_double(b.low);
    out += ',';
    out += format_double(b.high);
    out += ',';
    out += std::to_string(b.stats.count);
    out += ',';
    out += opt_field(b.stats.mean_baseline);
    out += ',';
    out += opt_field(b.stats.mean_personalized);
    out += ',';
    out += opt_field(b.stats.mean_delta);
    out += '\n';
  }
  return out;
}

inline void write_slice_csv(const std::filesystem::path& path,
                            const SliceTable& table) {
  atomic_write(path, slice_to_csv(table));
}

inline std::string sweep_to_csv(std::span<const SweepRow> rows) {
  std::string out = "B,L,mean_delta,frac_ge_0.02\n";
  for (const auto& row : rows) {
    out += std::to_string(row.strategy.batch_size);
    out += ',';
    out += format_double(row.strategy.learning_rate);
    out += ',';
    out += opt_field(row.stats.mean_delta);
    out += ',';
    std::string frac;
    for (const auto& [thr, f] : row.stats.threshold_fractions)
      if (thr == 0.02) frac = format_double(f);
    out += frac;
    out += '\n';
  }
  return out;
}

inline void write_sweep_csv(const std::filesystem::path& path,
                            std::span<const SweepRow> rows) {
  atomic_write(path, sweep_to_csv(rows));
}

inline std::string summary_to_kv(const SummaryStats& stats,
                                 const GatePolicy& policy,
                                 std::int64_t gate_accepted) {
  KeyValueFile kv;
  kv.set("reports", std::to_string(stats.count));
  if (stats.mean_baseline)
    kv.set("mean_baseline_accuracy", format_double(*stats.mean_baseline));
  if (stats.mean_personalized)
    kv.set("mean_personalized_accuracy", format_double(*stats.mean_personalized));
  if (stats.mean_delta) kv.set("mean_delta", format_double(*stats.mean_delta));
  if (stats.relative_improvement)
    kv.set("relative_improvement", format_double(*stats.relative_improvement));
  for (const auto& [thr, frac] : stats.threshold_fractions)
    kv.set("frac_delta_ge_" + format_double(thr), format_double(frac));
  kv.set("gate_min_delta", format_double(policy.min_delta));
  kv.set("gate_min_test_tokens", std::to_string(policy.min_test_tokens));
  kv.set("gate_accepted", std::to_string(gate_accepted));
  if (stats.count > 0)
    kv.set("gate_accepted_fraction",
           format_double(static_cast<double>(gate_accepted) /
                         static_cast<double>(stats.count)));
  return kv.serialize();
}

inline std::string train_metrics_to_csv(std::span<const RoundMetrics> history) {
  std::string out = "round,mean_loss,clients,total_tokens\n";
  for (const auto& m : history) {
    out += std::to_string(m.round_index);
    out += ',';
    out += format_double(m.mean_loss);
    out += ',';
    out += std::to_string(m.clients);
    out += ',';
    out += std::to_string(m.total_tokens);
    out += '\n';
  }
  return out;
}

// Self-contained SVG bar chart; no renderer dependencies. Underflow and
// overflow are drawn as flanking bars when nonzero.
inline std::string histogram_to_svg(const Histogram& h,
                                    const std::string& title) {
  struct Bar {
    std::string label;
    std::int64_t count;
  };
  std::vector<Bar> bars;
  if (h.underflow > 0) bars.push_back({"<" + format_double(h.spec.edges.front()), h.underflow});
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    bars.push_back({format_double(h.spec.edges[i]), h.counts[i]});
  if (h.overflow > 0)
    bars.push_back({">" + format_double(h.spec.edges.back()), h.overflow});

  std::int64_t max_count = 1;
  for (const auto& b : bars) max_count = std::max(max_count, b.count);

  const int width = 720, height = 360;
  const int left = 50, right = 10, top = 30, bottom = 40;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const double bar_w = plot_w / static_cast<double>(bars.size());

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(width / 2) +
         "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">" + title + "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double frac = static_cast<double>(bars[i].count) /
                        static_cast<double>(max_count);
    const double bh = plot_h * frac;
    const double x = left + bar_w * static_cast<double>(i);
    const double y = top + (plot_h - bh);
    svg += "<rect x=\"" + format_double(x) + "\" y=\"" + format_double(y) +
           "\" width=\"" + format_double(bar_w * 0.92) + "\" height=\"" +
           format_double(bh) + "\" fill=\"#4878a8\"/>\n";
  }
  svg += "<line x1=\"" + std::to_string(left) + "\" y1=\"" +
         format_double(top + plot_h) + "\" x2=\"" +
         std::to_string(width - right) + "\" y2=\"" + format_double(top + plot_h) +
         "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + std::to_string(left) + "\" y=\"" +
         std::to_string(height - 12) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" +
         format_double(h.spec.edges.front()) + "</text>\n";
  svg += "<text x=\"" + std::to_string(width - right) + "\" y=\"" +
         std::to_string(height - 12) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
         format_double(h.spec.edges.back()) + "</text>\n";
  svg += "<text x=\"" + std::to_string(left - 4) + "\" y=\"" +
         std::to_string(top + 10) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
         std::to_string(max_count) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace fedpe

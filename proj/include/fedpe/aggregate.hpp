// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "fedpe/fpe.hpp"

namespace fedpe {

// Server-side reduction of metric reports: delta histograms, per-client
// (unweighted) summary statistics, and slices by train-token count or
// baseline accuracy. Bucket convention everywhere: [e_i, e_{i+1}) with
// the final bucket closed, values below e_0 to underflow, above e_m to
// overflow.

struct HistogramSpec {
  std::vector<double> edges;

  void validate() const {
    if (edges.size() < 2)
      throw std::invalid_argument("histogram spec needs >= 2 edges");
    for (std::size_t i = 1; i < edges.size(); ++i)
      if (!(edges[i] > edges[i - 1]))
        throw std::invalid_argument("histogram edges must be strictly increasing");
  }

  std::int64_t buckets() const {
    return static_cast<std::int64_t>(edges.size()) - 1;
  }
};

// -1 underflow, buckets() overflow, else the bucket index.
inline std::int64_t bucket_of(const std::vector<double>& edges, double x) {
  if (std::isnan(x)) throw std::invalid_argument("cannot bucket NaN");
  if (x < edges.front()) return -1;
  if (x > edges.back()) return static_cast<std::int64_t>(edges.size()) - 1;
  auto it = std::upper_bound(edges.begin(), edges.end(), x);
  std::int64_t idx = static_cast<std::int64_t>(it - edges.begin()) - 1;
  return std::min(idx, static_cast<std::int64_t>(edges.size()) - 2);
}

struct Histogram {
  HistogramSpec spec;
  std::vector<std::int64_t> counts;
  std::int64_t underflow = 0;
  std::int64_t overflow = 0;

  std::int64_t total() const {
    std::int64_t n = underflow + overflow;
    for (auto c : counts) n += c;
    return n;
  }

  // Counts add exactly, so partial histograms merge in any order.
  void merge(const Histogram& other) {
    if (spec.edges != other.spec.edges)
      throw std::invalid_argument("histogram merge: spec mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    underflow += other.underflow;
    overflow += other.overflow;
  }
};

inline Histogram build_histogram(std::span<const double> values,
                                 const HistogramSpec& spec) {
  spec.validate();
  Histogram h{spec, std::vector<std::int64_t>(
                        static_cast<std::size_t>(spec.buckets()), 0)};
  for (double x : values) {
    const std::int64_t b = bucket_of(spec.edges, x);
    if (b < 0)
      ++h.underflow;
    else if (b >= spec.buckets())
      ++h.overflow;
    else
      ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

// Neumaier-compensated accumulator; keeps sums order-insensitive to well
// below the 1e-12 merge tolerance.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct SummaryStats {
  std::int64_t count = 0;
  std::optional<double> mean_baseline;
  std::optional<double> mean_personalized;
  std::optional<double> mean_delta;
  // mean_delta / mean_baseline; absent when mean baseline is 0 (or empty).
  std::optional<double> relative_improvement;
  // (threshold, fraction of reports with delta >= threshold)
  std::vector<std::pair<double, double>> threshold_fractions;
};

inline const std::vector<double>& default_summary_thresholds() {
  static const std::vector<double> kDefaults{0.02};
  return kDefaults;
}

// Unweighted per-client means; every client counts once regardless of
// token volume. mean_delta is computed as mean_personalized -
// mean_baseline, which equals the mean of per-report deltas by linearity.
inline SummaryStats summarize(
    std::span<const MetricReport> reports,
    std::span<const double> thresholds = default_summary_thresholds()) {
  SummaryStats s;
  s.count = static_cast<std::int64_t>(reports.size());
  if (s.count == 0) return s;

  CompensatedSum base, pers;
  for (const auto& r : reports) {
    base.add(r.baseline_accuracy);
    pers.add(r.personalized_accuracy);
  }
  const double n = static_cast<double>(s.count);
  s.mean_baseline = base.value() / n;
  s.mean_personalized = pers.value() / n;
  s.mean_delta = *s.mean_personalized - *s.mean_baseline;
  if (*s.mean_baseline != 0.0)
    s.relative_improvement = *s.mean_delta / *s.mean_baseline;

  for (double thr : thresholds) {
    std::int64_t hits = 0;
    for (const auto& r : reports)
      if (r.delta >= thr) ++hits;
    s.threshold_fractions.emplace_back(thr, static_cast<double>(hits) / n);
  }
  return s;
}

enum class SliceKey { train_tokens, baseline_accuracy };

inline const char* slice_key_name(SliceKey key) {
  return key == SliceKey::train_tokens ? "train_tokens" : "baseline_accuracy";
}

struct SliceSpec {
  SliceKey key = SliceKey::train_tokens;
  std::vector<double> edges;

  void validate() const { HistogramSpec{edges}.validate(); }
};

struct SliceBucket {
  double low = 0.0;
  double high = 0.0;
  SummaryStats stats;
};

struct SliceTable {
  SliceSpec spec;
  std::vector<SliceBucket> buckets;  // underflow, edge buckets, overflow
};

inline double slice_key_value(const MetricReport& r, SliceKey key) {
  return key == SliceKey::train_tokens
             ? static_cast<double>(r.train_tokens)
             : r.baseline_accuracy;
}

// Partitions every report into exactly one bucket (underflow and
// overflow rows included, so counts always sum to the input size).
inline SliceTable slice(std::span<const MetricReport> reports,
                        const SliceSpec& spec) {
  spec.validate();
  const std::int64_t m = static_cast<std::int64_t>(spec.edges.size()) - 1;
  std::vector<std::vector<MetricReport>> groups(static_cast<std::size_t>(m + 2));
  for (const auto& r : reports) {
    const std::int64_t b = bucket_of(spec.edges, slice_key_value(r, spec.key));
    groups[static_cast<std::size_t>(b + 1)].push_back(r);
  }

  const double inf = std::numeric_limits<double>::infinity();
  SliceTable table{spec, {}};
  table.buckets.reserve(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    SliceBucket bucket;
    bucket.low = i == 0 ? -inf : spec.edges[i - 1];
    bucket.high = i == groups.size() - 1 ? inf : spec.edges[i];
    bucket.stats = summarize(groups[i]);
    table.buckets.push_back(std::move(bucket));
  }
  return table;
}

struct SweepRow {
  PersonalizationStrategy strategy;
  SummaryStats stats;
};

// One row per strategy in ascending (B, L, T, E) order; the Table-1
// layout of mean deltas plus the >= 0.02 improvement fraction.
inline std::vector<SweepRow> sweep_table(
    std::vector<std::pair<PersonalizationStrategy, std::vector<MetricReport>>>
        cells) {
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    const auto& x = a.first;
    const auto& y = b.first;
    return std::tie(x.batch_size, x.learning_rate, x.token_budget,
                    x.epoch_budget) < std::tie(y.batch_size, y.learning_rate,
                                               y.token_budget, y.epoch_budget);
  });
  std::vector<SweepRow> rows;
  rows.reserve(cells.size());
  for (auto& [strategy, reports] : cells)
    rows.push_back({strategy, summarize(reports)});
  return rows;
}

}  // namespace fedpe

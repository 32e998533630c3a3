// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedpe/aggregate.hpp"
#include "fedpe/checkpoint.hpp"
#include "fedpe/corpus_io.hpp"
#include "fedpe/errors.hpp"
#include "fedpe/fedcore.hpp"
#include "fedpe/fpe.hpp"
#include "fedpe/kv.hpp"
#include "fedpe/report_io.hpp"
#include "fedpe/synthdata.hpp"

namespace fedpe {

// Experiment configuration: plain-text key-value with dotted sections.
// Every key has a default; unknown keys are hard errors so sweep typos
// fail loudly instead of silently running the defaults.
struct ExperimentConfig {
  std::uint64_t master_seed = 1;

  // model.*
  std::int64_t vocab_size = 200;
  std::int64_t embedding_dim = 16;
  std::int64_t hidden_units = 32;

  // data.* (empty corpus path -> synthesize from population.*)
  std::string corpus_path;

  // population.*
  std::int64_t users = 500;
  double alpha = 0.6;
  std::int64_t sentences_min = 50;
  std::int64_t sentences_max = 150;
  std::int64_t sentence_len_min = 4;
  std::int64_t sentence_len_max = 10;

  // train.*
  std::int64_t rounds = 50;
  std::int64_t clients_per_round = 20;
  double client_lr = 0.5;
  std::int64_t local_epochs = 1;
  std::int64_t local_batch = 0;  // 0 = full batch
  std::int64_t checkpoint_interval = 0;

  // server.*
  double server_momentum = 0.9;
  double server_lr = 1.0;

  // fpe.*
  double train_fraction = 0.8;

  // sweep.*
  std::vector<std::int64_t> sweep_batch_sizes{5, 10, 20};
  std::vector<double> sweep_learning_rates{0.01, 0.1, 1.0};
  std::int64_t token_budget = 5000;
  std::int64_t epoch_budget = 1;

  // hist.* (empty -> 41 uniform buckets over [-0.1, 0.1])
  std::vector<double> delta_edges;

  // slice.*
  std::vector<double> token_edges{0, 1000, 2500, 5000,
                                  std::numeric_limits<double>::infinity()};
  std::vector<double> baseline_edges{0, 0.1, 0.15, 0.2, 1.0};

  // gate.*
  GatePolicy gate_policy{0.0, 1};

  // summary.*
  std::vector<double> summary_thresholds{0.02};

  static ExperimentConfig from_kv(const KeyValueFile& kv);
  static ExperimentConfig from_file(const std::filesystem::path& path) {
    return from_kv(KeyValueFile::parse_file(path));
  }

  void validate() const;

  ModelConfig model_config() const {
    return {vocab_size, embedding_dim, hidden_units,
            derive_seed(master_seed, "model-init")};
  }

  PopulationSpec population_spec() const {
    return {users,
            vocab_size,
            alpha,
            sentences_min,
            sentences_max,
            sentence_len_min,
            sentence_len_max,
            derive_seed(master_seed, "population")};
  }

  HistogramSpec histogram_spec() const {
    if (!delta_edges.empty()) return {delta_edges};
    HistogramSpec spec;
    spec.edges.reserve(42);
    for (int i = 0; i <= 41; ++i)
      spec.edges.push_back(-0.1 + 0.2 * static_cast<double>(i) / 41.0);
    return spec;
  }

  // Strategy cross product in ascending (B, L) order.
  std::vector<PersonalizationStrategy> sweep_strategies() const {
    auto bs = sweep_batch_sizes;
    auto ls = sweep_learning_rates;
    std::sort(bs.begin(), bs.end());
    std::sort(ls.begin(), ls.end());
    std::vector<PersonalizationStrategy> out;
    out.reserve(bs.size() * ls.size());
    for (auto b : bs)
      for (auto l : ls) out.push_back({l, b, token_budget, epoch_budget});
    return out;
  }

  // Canonical serialization of the effective config; feeds the hash
  // recorded beside checkpoints.
  KeyValueFile to_kv() const;
  std::string config_hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(to_kv().hash()));
    return buf;
  }
};

inline KeyValueFile ExperimentConfig::to_kv() const {
  KeyValueFile kv;
  auto join_f64 = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? "," : "") + format_double(v[i]);
    return s;
  };
  auto join_i64 = [](const std::vector<std::int64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  kv.set("seed", std::to_string(master_seed));
  kv.set("model.vocab_size", std::to_string(vocab_size));
  kv.set("model.embedding_dim", std::to_string(embedding_dim));
  kv.set("model.hidden_units", std::to_string(hidden_units));
  kv.set("data.corpus", corpus_path);
  kv.set("population.users", std::to_string(users));
  kv.set("population.alpha", format_double(alpha));
  kv.set("population.sentences_min", std::to_string(sentences_min));
  kv.set("population.sentences_max", std::to_string(sentences_max));
  kv.set("population.sentence_len_min", std::to_string(sentence_len_min));
  kv.set("population.sentence_len_max", std::to_string(sentence_len_max));
  kv.set("train.rounds", std::to_string(rounds));
  kv.set("train.clients_per_round", std::to_string(clients_per_round));
  kv.set("train.client_lr", format_double(client_lr));
  kv.set("train.local_epochs", std::to_string(local_epochs));
  kv.set("train.local_batch", std::to_string(local_batch));
  kv.set("train.checkpoint_interval", std::to_string(checkpoint_interval));
  kv.set("server.momentum", format_double(server_momentum));
  kv.set("server.lr", format_double(server_lr));
  kv.set("fpe.train_fraction", format_double(train_fraction));
  kv.set("sweep.batch_sizes", join_i64(sweep_batch_sizes));
  kv.set("sweep.learning_rates", join_f64(sweep_learning_rates));
  kv.set("sweep.token_budget", std::to_string(token_budget));
  kv.set("sweep.epoch_budget", std::to_string(epoch_budget));
  kv.set("hist.delta_edges", join_f64(delta_edges));
  kv.set("slice.token_edges", join_f64(token_edges));
  kv.set("slice.baseline_edges", join_f64(baseline_edges));
  kv.set("gate.min_delta", format_double(gate_policy.min_delta));
  kv.set("gate.min_test_tokens", std::to_string(gate_policy.min_test_tokens));
  kv.set("summary.thresholds", join_f64(summary_thresholds));
  return kv;
}

inline ExperimentConfig ExperimentConfig::from_kv(const KeyValueFile& kv) {
  ExperimentConfig cfg;
  const std::set<std::string> known = {
      "seed",
      "model.vocab_size",
      "model.embedding_dim",
      "model.hidden_units",
      "data.corpus",
      "population.users",
      "population.alpha",
      "population.sentences_min",
      "population.sentences_max",
      "population.sentence_len_min",
      "population.sentence_len_max",
      "train.rounds",
      "train.clients_per_round",
      "train.client_lr",
      "train.local_epochs",
      "train.local_batch",
      "train.checkpoint_interval",
      "server.momentum",
      "server.lr",
      "fpe.train_fraction",
      "sweep.batch_sizes",
      "sweep.learning_rates",
      "sweep.token_budget",
      "sweep.epoch_budget",
      "hist.delta_edges",
      "slice.token_edges",
      "slice.baseline_edges",
      "gate.min_delta",
      "gate.min_test_tokens",
      "summary.thresholds",
  };
  for (const auto& [key, value] : kv.entries())
    if (!known.count(key)) throw ConfigError("unknown config key `" + key + "`");

  auto i64 = [&](const char* key, std::int64_t& out) {
    if (auto v = kv.find(key)) out = parse_i64(*v, key);
  };
  auto u64 = [&](const char* key, std::uint64_t& out) {
    if (auto v = kv.find(key))
      out = static_cast<std::uint64_t>(parse_i64(*v, key));
  };
  auto f64 = [&](const char* key, double& out) {
    if (auto v = kv.find(key)) out = parse_f64(*v, key);
  };
  auto f64list = [&](const char* key, std::vector<double>& out) {
    if (auto v = kv.find(key)) out = parse_f64_list(*v, key);
  };
  auto i64list = [&](const char* key, std::vector<std::int64_t>& out) {
    if (auto v = kv.find(key)) out = parse_i64_list(*v, key);
  };

  u64("seed", cfg.master_seed);
  i64("model.vocab_size", cfg.vocab_size);
  i64("model.embedding_dim", cfg.embedding_dim);
  i64("model.hidden_units", cfg.hidden_units);
  if (auto v = kv.find("data.corpus")) cfg.corpus_path = *v;
  i64("population.users", cfg.users);
  f64("population.alpha", cfg.alpha);
  i64("population.sentences_min", cfg.sentences_min);
  i64("population.sentences_max", cfg.sentences_max);
  i64("population.sentence_len_min", cfg.sentence_len_min);
  i64("population.sentence_len_max", cfg.sentence_len_max);
  i64("train.rounds", cfg.rounds);
  i64("train.clients_per_round", cfg.clients_per_round);
  f64("train.client_lr", cfg.client_lr);
  i64("train.local_epochs", cfg.local_epochs);
  i64("train.local_batch", cfg.local_batch);
  i64("train.checkpoint_interval", cfg.checkpoint_interval);
  f64("server.momentum", cfg.server_momentum);
  f64("server.lr", cfg.server_lr);
  f64("fpe.train_fraction", cfg.train_fraction);
  i64list("sweep.batch_sizes", cfg.sweep_batch_sizes);
  f64list("sweep.learning_rates", cfg.sweep_learning_rates);
  i64("sweep.token_budget", cfg.token_budget);
  i64("sweep.epoch_budget", cfg.epoch_budget);
  f64list("hist.delta_edges", cfg.delta_edges);
  f64list("slice.token_edges", cfg.token_edges);
  f64list("slice.baseline_edges", cfg.baseline_edges);
  f64("gate.min_delta", cfg.gate_policy.min_delta);
  i64("gate.min_test_tokens", cfg.gate_policy.min_test_tokens);
  f64list("summary.thresholds", cfg.summary_thresholds);

  cfg.validate();
  return cfg;
}

inline void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (vocab_size < 4) fail("model.vocab_size must be >= 4");
  if (embedding_dim < 1) fail("model.embedding_dim must be >= 1");
  if (hidden_units < 1) fail("model.hidden_units must be >= 1");
  try {
    population_spec().validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (rounds < 0) fail("train.rounds must be >= 0");
  if (clients_per_round < 1) fail("train.clients_per_round must be >= 1");
  if (client_lr < 0) fail("train.client_lr must be >= 0");
  if (local_epochs < 1) fail("train.local_epochs must be >= 1");
  if (local_batch < 0) fail("train.local_batch must be >= 0");
  if (checkpoint_interval < 0) fail("train.checkpoint_interval must be >= 0");
  if (server_momentum < 0.0 || server_momentum >= 1.0)
    fail("server.momentum must be in [0, 1)");
  if (server_lr < 0.0) fail("server.lr must be >= 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail("fpe.train_fraction must be in (0, 1)");
  if (sweep_batch_sizes.empty()) fail("sweep.batch_sizes must be non-empty");
  for (auto b : sweep_batch_sizes)
    if (b < 1) fail("sweep.batch_sizes entries must be >= 1");
  if (sweep_learning_rates.empty())
    fail("sweep.learning_rates must be non-empty");
  for (auto l : sweep_learning_rates)
    if (l < 0) fail("sweep.learning_rates entries must be >= 0");
  if (token_budget < 0) fail("sweep.token_budget must be >= 0");
  if (epoch_budget < 0) fail("sweep.epoch_budget must be >= 0");
  try {
    histogram_spec().validate();
    SliceSpec{SliceKey::train_tokens, token_edges}.validate();
    SliceSpec{SliceKey::baseline_accuracy, baseline_edges}.validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (gate_policy.min_test_tokens < 1) fail("gate.min_test_tokens must be >= 1");
}

// ---------------------------------------------------------------------
// Artifact layout within an output directory.

struct ArtifactPaths {
  std::filesystem::path root;

  std::filesystem::path corpus() const { return root / "corpus.jsonl"; }
  std::filesystem::path vocab() const { return root / "vocab.txt"; }
  std::filesystem::path checkpoint() const { return root / "checkpoint.bin"; }
  std::filesystem::path checkpoint_meta() const {
    return root / "checkpoint.meta";
  }
  std::filesystem::path train_metrics() const {
    return root / "train_metrics.csv";
  }
  std::filesystem::path sweep() const { return root / "sweep.csv"; }

  std::filesystem::path strategy_dir(const PersonalizationStrategy& s) const {
    return root / ("B" + std::to_string(s.batch_size) + "_L" +
                   format_double(s.learning_rate) + "_T" +
                   std::to_string(s.token_budget) + "_E" +
                   std::to_string(s.epoch_budget));
  }
};

inline std::string strategy_to_kv(const PersonalizationStrategy& s,
                                  double train_fraction) {
  KeyValueFile kv;
  kv.set("L", format_double(s.learning_rate));
  kv.set("B", std::to_string(s.batch_size));
  kv.set("T", std::to_string(s.token_budget));
  kv.set("E", std::to_string(s.epoch_budget));
  kv.set("train_fraction", format_double(train_fraction));
  return kv.serialize();
}

inline PersonalizationStrategy strategy_from_kv(const KeyValueFile& kv,
                                                double* train_fraction = nullptr) {
  PersonalizationStrategy s;
  if (auto v = kv.find("L")) s.learning_rate = parse_f64(*v, "L");
  if (auto v = kv.find("B")) s.batch_size = parse_i64(*v, "B");
  if (auto v = kv.find("T")) s.token_budget = parse_i64(*v, "T");
  if (auto v = kv.find("E")) s.epoch_budget = parse_i64(*v, "E");
  if (train_fraction)
    if (auto v = kv.find("train_fraction"))
      *train_fraction = parse_f64(*v, "train_fraction");
  s.validate();
  return s;
}

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create output directory: " + dir.string());
}

inline std::vector<ClientDataset> load_population(
    const ExperimentConfig& cfg, const ArtifactPaths& paths,
    Vocabulary* vocab_out) {
  if (!cfg.corpus_path.empty()) {
    auto [vocab, clients] = ingest_corpus(cfg.corpus_path, cfg.vocab_size);
    if (vocab_out) *vocab_out = vocab;
    return clients;
  }
  Vocabulary vocab = load_vocabulary(paths.vocab());
  if (vocab.size() != cfg.vocab_size)
    throw MismatchError("vocabulary size " + std::to_string(vocab.size()) +
                        " != model.vocab_size " + std::to_string(cfg.vocab_size));
  if (vocab_out) *vocab_out = vocab;
  return load_corpus_with_vocab(paths.corpus(), vocab);
}

}  // namespace detail

// gen-data: synthesize the population and write corpus + vocabulary.
inline void cmd_gen_data(const ExperimentConfig& cfg,
                         const std::filesystem::path& out_dir,
                         unsigned threads = 1) {
  cfg.validate();
  detail::ensure_dir(out_dir);
  ArtifactPaths paths{out_dir};
  const Vocabulary vocab = synthetic_vocabulary(cfg.vocab_size);
  const auto population = generate_population(cfg.population_spec(), threads);
  write_corpus_jsonl(paths.corpus(), population, vocab);
  save_vocabulary(paths.vocab(), vocab);
}

// train-global: FederatedAveraging over the corpus; writes the final
// checkpoint, its metadata sidecar, and the per-round metrics CSV.
inline void cmd_train_global(const ExperimentConfig& cfg,
                             const std::filesystem::path& out_dir,
                             unsigned threads = 1) {
  cfg.validate();
  detail::ensure_dir(out_dir);
  ArtifactPaths paths{out_dir};
  Vocabulary vocab;
  const auto population = detail::load_population(cfg, paths, &vocab);
  if (!cfg.corpus_path.empty()) save_vocabulary(paths.vocab(), vocab);
  if (static_cast<std::int64_t>(population.size()) < cfg.clients_per_round)
    throw ConfigError("population smaller than train.clients_per_round");

  RoundConfig round_cfg;
  round_cfg.clients_per_round = cfg.clients_per_round;
  round_cfg.client_lr = cfg.client_lr;
  round_cfg.local_epochs = cfg.local_epochs;
  round_cfg.local_batch = cfg.local_batch;
  round_cfg.sampling_seed = derive_seed(cfg.master_seed, "client-sampling");

  TrainOptions opts;
  opts.threads = threads;
  opts.checkpoint_interval = cfg.checkpoint_interval;
  if (cfg.checkpoint_interval > 0)
    opts.checkpoint_sink = [&](std::int64_t round, const ParamSet& params) {
      save_checkpoint(out_dir / ("checkpoint_round" + std::to_string(round) +
                                 ".bin"),
                      params);
    };

  TrainResult result =
      train_global(cfg.model_config(), population, cfg.rounds, round_cfg,
                   {cfg.server_momentum, cfg.server_lr}, opts);

  save_checkpoint(paths.checkpoint(), result.params);
  KeyValueFile meta;
  meta.set("rounds", std::to_string(cfg.rounds));
  meta.set("seed", std::to_string(cfg.master_seed));
  meta.set("config_hash", cfg.config_hash());
  atomic_write(paths.checkpoint_meta(), meta.serialize());
  atomic_write(paths.train_metrics(), train_metrics_to_csv(result.history));
}

namespace detail {

// Everything run-fpe emits for one strategy's report set; report reuses
// the same writer, and only report-derived values go in, so
// re-aggregation from the reports CSV is bitwise idempotent.
inline void write_aggregates(const ExperimentConfig& cfg,
                             const std::filesystem::path& dir,
                             std::span<const MetricReport> reports) {
  ensure_dir(dir);
  std::vector<double> deltas;
  deltas.reserve(reports.size());
  for (const auto& r : reports) deltas.push_back(r.delta);

  const Histogram hist = build_histogram(deltas, cfg.histogram_spec());
  write_histogram_csv(dir / "histogram.csv", hist);
  atomic_write(dir / "histogram.svg",
               histogram_to_svg(hist, "accuracy delta"));

  write_slice_csv(dir / "slice_train_tokens.csv",
                  slice(reports, {SliceKey::train_tokens, cfg.token_edges}));
  write_slice_csv(
      dir / "slice_baseline_accuracy.csv",
      slice(reports, {SliceKey::baseline_accuracy, cfg.baseline_edges}));

  const SummaryStats stats = summarize(reports, cfg.summary_thresholds);
  std::int64_t accepted = 0;
  for (const auto& r : reports)
    if (gate(r, cfg.gate_policy) == GateDecision::accept) ++accepted;
  atomic_write(dir / "summary.txt",
               summary_to_kv(stats, cfg.gate_policy, accepted));
}

}  // namespace detail

// run-fpe: the full sweep. Per strategy: reports CSV plus aggregates in
// its own directory; the Table-1-style sweep CSV is written last.
inline void cmd_run_fpe(const ExperimentConfig& cfg,
                        const std::filesystem::path& out_dir,
                        unsigned threads = 1) {
  cfg.validate();
  detail::ensure_dir(out_dir);
  ArtifactPaths paths{out_dir};
  Vocabulary vocab;
  const auto population = detail::load_population(cfg, paths, &vocab);

  const ParamSet global = load_checkpoint(paths.checkpoint());
  if (global.vocab_size != cfg.vocab_size ||
      global.embedding_dim != cfg.embedding_dim ||
      global.hidden_units != cfg.hidden_units)
    throw MismatchError("checkpoint dimensions do not match model config");

  std::vector<std::pair<PersonalizationStrategy, std::vector<MetricReport>>>
      cells;
  std::int64_t skipped = 0;
  for (const auto& strategy : cfg.sweep_strategies()) {
    FpeRunResult run =
        run_fpe(global, population, strategy, cfg.train_fraction, threads);
    skipped = run.skipped;  // eligibility is data-only, same for every cell
    const auto dir = paths.strategy_dir(strategy);
    detail::ensure_dir(dir);
    atomic_write(dir / "strategy.txt",
                 strategy_to_kv(strategy, cfg.train_fraction));
    write_reports_csv(dir / "reports.csv", run.reports);
    detail::write_aggregates(cfg, dir, run.reports);
    cells.emplace_back(strategy, std::move(run.reports));
  }
  KeyValueFile run_info;
  run_info.set("clients", std::to_string(population.size()));
  run_info.set("skipped_clients", std::to_string(skipped));
  run_info.set("strategies", std::to_string(cells.size()));
  atomic_write(out_dir / "fpe_run.txt", run_info.serialize());
  const auto rows = sweep_table(std::move(cells));
  write_sweep_csv(paths.sweep(), rows);
}

// report: recompute aggregates from a stored reports CSV, no clients run.
inline void cmd_report(const ExperimentConfig& cfg,
                       const std::filesystem::path& reports_csv,
                       const std::filesystem::path& out_dir) {
  cfg.validate();
  const auto reports = read_reports_csv(reports_csv);
  detail::ensure_dir(out_dir);
  detail::write_aggregates(cfg, out_dir, reports, 0);
}

}  // namespace fedpe

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fedpe/dataset.hpp"
#include "fedpe/errors.hpp"
#include "fedpe/model.hpp"
#include "fedpe/parallel.hpp"

namespace fedpe {

// The five-step client procedure: split the local data temporally,
// evaluate the baseline on the held-out partition, fine-tune on the
// train partition, evaluate the personalized model on the same held-out
// partition, and report the accuracy delta. Only the MetricReport leaves
// the client task; raw sentences and fine-tuned parameters stay inside.

struct PersonalizationStrategy {
  double learning_rate = 0.0;     // L
  std::int64_t batch_size = 1;    // B, sentences per minibatch
  std::int64_t token_budget = 0;  // T, stop once >= T target tokens seen
  std::int64_t epoch_budget = 0;  // E, stop once >= E epochs completed

  void validate() const {
    if (learning_rate < 0.0)
      throw std::invalid_argument("strategy: learning rate must be >= 0");
    if (batch_size < 1)
      throw std::invalid_argument("strategy: batch size must be >= 1");
    if (token_budget < 0 || epoch_budget < 0)
      throw std::invalid_argument("strategy: budgets must be >= 0");
  }

  bool frozen() const { return token_budget == 0 || epoch_budget == 0; }
};

struct MetricReport {
  std::string client_id;
  double baseline_accuracy = 0.0;
  double personalized_accuracy = 0.0;
  double delta = 0.0;  // personalized - baseline, same test partition
  std::int64_t train_tokens = 0;  // target tokens in the train partition
  std::int64_t test_tokens = 0;   // target tokens in the test partition
};

struct GatePolicy {
  double min_delta = 0.0;
  std::int64_t min_test_tokens = 1;
};

enum class GateDecision { accept, reject };

// First floor(fraction * n) sentences train (clamped to [1, n-1]), the
// remainder test; temporal order preserved on both sides.
inline std::pair<ClientDataset, ClientDataset> split_dataset(
    const ClientDataset& data, double train_fraction) {
  if (!(train_fraction > 0.0) || !(train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must be in (0, 1)");
  const std::int64_t n = data.sentence_count();
  if (n < 2)
    throw InsufficientDataError("client " + data.id +
                                " has fewer than 2 sentences");
  std::int64_t k = static_cast<std::int64_t>(
      std::floor(train_fraction * static_cast<double>(n)));
  k = std::clamp<std::int64_t>(k, 1, n - 1);

  ClientDataset train{data.id, data.index, {}};
  ClientDataset test{data.id, data.index, {}};
  train.sentences.assign(data.sentences.begin(), data.sentences.begin() + k);
  test.sentences.assign(data.sentences.begin() + k, data.sentences.end());
  return {std::move(train), std::move(test)};
}

// Sequential minibatch SGD over the train partition in temporal order.
// The stopping rule is checked at every batch boundary, including before
// the first batch: stop once cumulative target tokens >= T or completed
// epochs >= E, whichever first. A zero budget therefore freezes the
// model. Returns the fine-tuned params and the tokens actually processed.
inline std::pair<ParamSet, std::int64_t> personalize(
    const ParamSet& global, const ClientDataset& train,
    const PersonalizationStrategy& s) {
  s.validate();
  if (train.sentences.empty())
    throw std::invalid_argument("personalize: empty train partition");

  ParamSet params = global;
  std::int64_t tokens = 0;
  std::int64_t epochs_done = 0;
  const std::int64_t n = train.sentence_count();

  while (!(tokens >= s.token_budget || epochs_done >= s.epoch_budget)) {
    for (std::int64_t lo = 0; lo < n; lo += s.batch_size) {
      const std::int64_t hi = std::min(lo + s.batch_size, n);
      std::span<const Sentence> batch(train.sentences.data() + lo,
                                      static_cast<std::size_t>(hi - lo));
      params = sgd_step(params, batch, s.learning_rate);
      for (const Sentence& sent : batch)
        tokens += static_cast<std::int64_t>(sent.size()) + 1;
      if (tokens >= s.token_budget) return {std::move(params), tokens};
    }
    ++epochs_done;
  }
  return {std::move(params), tokens};
}

// Both accuracies on the identical test partition.
inline std::pair<double, double> evaluate_pair(const ParamSet& global,
                                               const ParamSet& personalized,
                                               const ClientDataset& test) {
  if (test.sentences.empty())
    throw std::invalid_argument("evaluate_pair: empty test partition");
  const double base = accuracy(global, test.sentences).ratio();
  const double pers = accuracy(personalized, test.sentences).ratio();
  return {base, pers};
}

inline MetricReport fpe_client_task(const ParamSet& global,
                                    const ClientDataset& data,
                                    const PersonalizationStrategy& s,
                                    double train_fraction = 0.8) {
  auto [train, test] = split_dataset(data, train_fraction);
  const double base = accuracy(global, test.sentences).ratio();
  auto [personalized, processed] = personalize(global, train, s);
  (void)processed;
  const double pers = accuracy(personalized, test.sentences).ratio();

  MetricReport report;
  report.client_id = data.id;
  report.baseline_accuracy = base;
  report.personalized_accuracy = pers;
  report.delta = pers - base;
  report.train_tokens = train.target_token_count();
  report.test_tokens = test.target_token_count();
  return report;
}

inline GateDecision gate(const MetricReport& report, const GatePolicy& policy) {
  if (policy.min_test_tokens < 1)
    throw std::invalid_argument("gate: min_test_tokens must be >= 1");
  const bool accept = report.delta >= policy.min_delta &&
                      report.test_tokens >= policy.min_test_tokens;
  return accept ? GateDecision::accept : GateDecision::reject;
}

struct FpeRunResult {
  std::vector<MetricReport> reports;  // ascending client id
  std::int64_t skipped = 0;           // clients below the eligibility floor
};

inline FpeRunResult run_fpe(const ParamSet& global,
                            std::span<const ClientDataset> population,
                            const PersonalizationStrategy& s,
                            double train_fraction = 0.8, unsigned threads = 1) {
  std::vector<std::optional<MetricReport>> slots(population.size());
  parallel_for(static_cast<std::int64_t>(population.size()), threads,
               [&](std::int64_t i) {
                 try {
                   slots[static_cast<std::size_t>(i)] = fpe_client_task(
                       global, population[static_cast<std::size_t>(i)], s,
                       train_fraction);
                 } catch (const InsufficientDataError&) {
                   // skip; tallied below
                 }
               });
  FpeRunResult out;
  out.reports.reserve(population.size());
  for (auto& slot : slots) {
    if (slot)
      out.reports.push_back(std::move(*slot));
    else
      ++out.skipped;
  }
  return out;
}

}  // namespace fedpe

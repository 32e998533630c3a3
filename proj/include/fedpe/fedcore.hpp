// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedpe/dataset.hpp"
#include "fedpe/model.hpp"
#include "fedpe/parallel.hpp"
#include "fedpe/rng.hpp"

namespace fedpe {

// FederatedAveraging rounds with a Nesterov-momentum server optimizer.
// Client updates within a round are independent; aggregation consumes
// them in ascending client index so the result is identical for any
// execution order or thread count.

struct ClientUpdate {
  std::int64_t client_index = 0;
  ParamSet params;                // w_{t+1}^k
  std::int64_t weight_tokens = 0; // n_k, target tokens processed locally
  double mean_loss = 0.0;         // token-weighted local training loss
};

struct ServerOptimizerState {
  ParamSet velocity;
  double momentum = 0.9;       // mu in [0, 1)
  double learning_rate = 1.0;  // eta >= 0

  static ServerOptimizerState zero(const ModelConfig& cfg, double mu,
                                   double eta) {
    if (mu < 0.0 || mu >= 1.0)
      throw std::invalid_argument("server momentum must be in [0, 1)");
    if (eta < 0.0)
      throw std::invalid_argument("server learning rate must be >= 0");
    return {ParamSet::zeros(cfg), mu, eta};
  }
};

struct RoundConfig {
  std::int64_t clients_per_round = 1;  // K
  double client_lr = 0.0;              // epsilon
  std::int64_t local_epochs = 1;
  std::int64_t local_batch = 0;        // 0 = full batch
  std::int64_t round_index = 0;        // t
  std::uint64_t sampling_seed = 0;
};

struct RoundMetrics {
  std::int64_t round_index = 0;
  double mean_loss = 0.0;  // unweighted mean of per-client mean loss
  std::int64_t clients = 0;
  std::int64_t total_tokens = 0;
};

// Local epochs of minibatch SGD from the global params; batches are
// consecutive sentences in temporal order, the trailing partial batch
// included, no shuffling. n_k counts target tokens actually processed,
// so one epoch at full batch reduces to w_t - eps * g_k with n_k equal
// to the dataset's target count.
inline ClientUpdate client_update(const ParamSet& global,
                                  const ClientDataset& data,
                                  const RoundConfig& cfg) {
  if (data.sentences.empty())
    throw std::invalid_argument("client_update: empty client dataset");
  if (cfg.local_epochs < 1)
    throw std::invalid_argument("client_update: local_epochs must be >= 1");

  const std::int64_t n = data.sentence_count();
  const std::int64_t batch =
      cfg.local_batch <= 0 ? n : std::min(cfg.local_batch, n);

  ClientUpdate out;
  out.client_index = data.index;
  out.params = global;
  SgdBatchStats stats;
  for (std::int64_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (std::int64_t lo = 0; lo < n; lo += batch) {
      const std::int64_t hi = std::min(lo + batch, n);
      out.params = sgd_step(
          out.params,
          std::span<const Sentence>(data.sentences.data() + lo,
                                    static_cast<std::size_t>(hi - lo)),
          cfg.client_lr, &stats);
    }
  }
  out.weight_tokens = stats.target_tokens;
  out.mean_loss = stats.target_tokens > 0
                      ? stats.loss_token_sum / static_cast<double>(stats.target_tokens)
                      : 0.0;
  return out;
}

// Token-weighted mean sum_k (n_k / N) w_k, accumulated in ascending
// client index. Computed as w_0 + sum_k (n_k / N)(w_k - w_0), which
// reproduces all-equal inputs bit-exactly.
inline ParamSet federated_average(std::span<const ClientUpdate> updates) {
  if (updates.empty())
    throw std::invalid_argument("federated_average: no updates");
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_index < updates[b].client_index;
  });

  std::int64_t total = 0;
  for (const auto& u : updates) {
    if (u.weight_tokens <= 0)
      throw std::invalid_argument("federated_average: non-positive weight");
    if (!u.params.same_shape(updates[order[0]].params))
      throw std::invalid_argument("federated_average: shape mismatch");
    total += u.weight_tokens;
  }

  const ParamSet& anchor = updates[order[0]].params;
  ParamSet result = anchor;
  auto res_t = result.tensors();
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const ClientUpdate& u = updates[order[rank]];
    const double a = static_cast<double>(u.weight_tokens) /
                     static_cast<double>(total);
    auto upd_t = u.params.tensors();
    auto anc_t = anchor.tensors();
    for (std::size_t i = 0; i < res_t.size(); ++i)
      for (std::size_t k = 0; k < res_t[i]->size(); ++k)
        (*res_t[i])[k] += a * ((*upd_t[i])[k] - (*anc_t[i])[k]);
  }
  return result;
}

// Nesterov momentum on the pseudo-gradient g = global - averaged:
//   v' = mu v + g
//   new = global - eta (g + mu v')
// evaluated as (1 - eta) global + eta averaged - eta mu v' so that
// mu = 0, eta = 1 returns the averaged params exactly.
inline std::pair<ParamSet, ServerOptimizerState> server_step(
    const ParamSet& global, const ParamSet& averaged,
    ServerOptimizerState state) {
  if (!global.same_shape(averaged) || !global.same_shape(state.velocity))
    throw std::invalid_argument("server_step: shape mismatch");
  const double mu = state.momentum;
  const double eta = state.learning_rate;
  ParamSet next = ParamSet::zeros(global.config());
  auto next_t = next.tensors();
  auto glob_t = global.tensors();
  auto avg_t = averaged.tensors();
  auto vel_t = state.velocity.tensors();
  for (std::size_t i = 0; i < next_t.size(); ++i) {
    for (std::size_t k = 0; k < next_t[i]->size(); ++k) {
      const double g = (*glob_t[i])[k] - (*avg_t[i])[k];
      const double v_new = mu * (*vel_t[i])[k] + g;
      (*vel_t[i])[k] = v_new;
      (*next_t[i])[k] = (1.0 - eta) * (*glob_t[i])[k] + eta * (*avg_t[i])[k] -
                        (eta * mu) * v_new;
    }
  }
  return {std::move(next), std::move(state)};
}

// Samples K distinct clients without replacement from the round's seeded
// stream, returned ascending.
inline std::vector<std::int64_t> sample_round_clients(
    std::int64_t population, const RoundConfig& cfg) {
  if (cfg.clients_per_round < 1 || cfg.clients_per_round > population)
    throw std::invalid_argument("round sampling: bad clients_per_round");
  Rng rng(derive_stream(cfg.sampling_seed,
                        static_cast<std::uint64_t>(cfg.round_index)));
  std::vector<std::int64_t> ids(static_cast<std::size_t>(population));
  std::iota(ids.begin(), ids.end(), 0);
  // Partial Fisher-Yates: place the K selections at the front.
  for (std::int64_t i = 0; i < cfg.clients_per_round; ++i) {
    const std::int64_t j =
        i + static_cast<std::int64_t>(rng.below(
                static_cast<std::uint64_t>(population - i)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(cfg.clients_per_round));
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct RoundResult {
  ParamSet global;
  ServerOptimizerState state;
  RoundMetrics metrics;
};

inline RoundResult run_round(const ParamSet& global,
                             std::span<const ClientDataset> population,
                             const RoundConfig& cfg,
                             ServerOptimizerState state, unsigned threads = 1) {
  const auto selected =
      sample_round_clients(static_cast<std::int64_t>(population.size()), cfg);

  std::vector<ClientUpdate> updates(selected.size());
  parallel_for(static_cast<std::int64_t>(selected.size()), threads,
               [&](std::int64_t i) {
                 updates[static_cast<std::size_t>(i)] = client_update(
                     global,
                     population[static_cast<std::size_t>(
                         selected[static_cast<std::size_t>(i)])],
                     cfg);
               });

  RoundResult out{ParamSet{}, std::move(state), {}};
  const ParamSet averaged = federated_average(updates);
  auto stepped = server_step(global, averaged, std::move(out.state));
  out.global = std::move(stepped.first);
  out.state = std::move(stepped.second);

  out.metrics.round_index = cfg.round_index;
  out.metrics.clients = static_cast<std::int64_t>(updates.size());
  double loss_sum = 0.0;
  for (const auto& u : updates) {
    loss_sum += u.mean_loss;
    out.metrics.total_tokens += u.weight_tokens;
  }
  out.metrics.mean_loss = loss_sum / static_cast<double>(updates.size());
  return out;
}

struct ServerConfig {
  double momentum = 0.9;
  double learning_rate = 1.0;
};

struct TrainOptions {
  unsigned threads = 1;
  std::int64_t checkpoint_interval = 0;  // 0 = never mid-run
  std::function<void(std::int64_t round, const ParamSet&)> checkpoint_sink;
};

struct TrainResult {
  ParamSet params;
  std::vector<RoundMetrics> history;
};

inline TrainResult train_global(const ModelConfig& model_cfg,
                                std::span<const ClientDataset> population,
                                std::int64_t rounds, RoundConfig round_cfg,
                                const ServerConfig& server,
                                const TrainOptions& opts = {}) {
  if (rounds < 0) throw std::invalid_argument("train_global: rounds < 0");
  TrainResult result{init_params(model_cfg), {}};
  ServerOptimizerState state = ServerOptimizerState::zero(
      model_cfg, server.momentum, server.learning_rate);
  result.history.reserve(static_cast<std::size_t>(rounds));
  for (std::int64_t t = 0; t < rounds; ++t) {
    round_cfg.round_index = t;
    RoundResult r = run_round(result.params, population, round_cfg,
                              std::move(state), opts.threads);
    result.params = std::move(r.global);
    state = std::move(r.state);
    result.history.push_back(r.metrics);
    if (opts.checkpoint_sink && opts.checkpoint_interval > 0 &&
        (t + 1) % opts.checkpoint_interval == 0)
      opts.checkpoint_sink(t + 1, result.params);
  }
  return result;
}

}  // namespace fedpe

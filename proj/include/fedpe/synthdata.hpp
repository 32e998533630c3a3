// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpe/dataset.hpp"
#include "fedpe/parallel.hpp"
#include "fedpe/rng.hpp"
#include "fedpe/vocab.hpp"

namespace fedpe {

// Deterministic non-IID population generator. A seeded global order-1
// Markov chain over the word vocabulary is the shared language source;
// each user gets a perturbed copy and samples from the mixture
// (1 - alpha) * global + alpha * user, so alpha = 0 collapses to one
// shared language and alpha = 1 to fully private ones. Reserved tokens
// are never emitted; the model adds BOS/EOS structurally.

struct PopulationSpec {
  std::int64_t users = 1;
  std::int64_t vocab_size = 4;  // V, including the 3 reserved ids
  double alpha = 0.0;           // per-user deviation in [0, 1]
  std::int64_t sentences_min = 1;
  std::int64_t sentences_max = 1;
  std::int64_t sentence_len_min = 1;  // words per sentence
  std::int64_t sentence_len_max = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (users < 1) throw std::invalid_argument("population: users must be >= 1");
    if (vocab_size < kReservedTokens + 1)
      throw std::invalid_argument("population: vocab_size must be >= 4");
    if (alpha < 0.0 || alpha > 1.0)
      throw std::invalid_argument("population: alpha must be in [0, 1]");
    if (sentences_min < 1 || sentences_min > sentences_max)
      throw std::invalid_argument("population: bad sentence count bounds");
    if (sentence_len_min < 1 || sentence_len_min > sentence_len_max)
      throw std::invalid_argument("population: bad sentence length bounds");
  }

  std::int64_t words() const { return vocab_size - kReservedTokens; }
};

// Row-stochastic order-1 chain over word ids [0, words); `initial` is
// the first-token distribution, `transition` row-major words x words.
struct MarkovChain {
  std::int64_t words = 0;
  std::vector<double> initial;
  std::vector<double> transition;

  const double* row(std::int64_t from) const {
    return transition.data() + from * words;
  }
};

namespace detail {

// Fills `out` (length n) with a distribution that has one primary and
// one secondary preferred entry: base weights unit()^2 normalized to
// mass 0.35, plus 0.45 on the primary and 0.20 on the secondary. Peaky
// rows make the source learnable; the preferred pair is what per-user
// perturbation can reorder.
inline void sample_peaked_distribution(Rng& rng, std::int64_t n, double* out) {
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double u = rng.unit();
    out[i] = u * u;
    sum += out[i];
  }
  const double base_mass = 0.35;
  const double scale = sum > 0.0 ? base_mass / sum : 0.0;
  for (std::int64_t i = 0; i < n; ++i) out[i] *= scale;
  if (sum <= 0.0)
    for (std::int64_t i = 0; i < n; ++i) out[i] = base_mass / static_cast<double>(n);

  const std::int64_t primary = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
  std::int64_t secondary = primary;
  if (n > 1)
    while (secondary == primary)
      secondary = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
  out[primary] += 0.45;
  out[secondary] += 0.20;
}

inline void normalize_row(std::int64_t n, double* row) {
  double sum = 0.0;
  for (std::int64_t i = 0; i < n; ++i) sum += row[i];
  for (std::int64_t i = 0; i < n; ++i) row[i] /= sum;
}

// Sample an index from a distribution by inverse CDF walk.
inline std::int64_t sample_categorical(Rng& rng, std::int64_t n,
                                       const double* dist) {
  const double u = rng.unit();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    acc += dist[i];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace detail

inline MarkovChain build_global_chain(std::int64_t words, std::uint64_t seed) {
  if (words < 1) throw std::invalid_argument("chain needs >= 1 word");
  MarkovChain chain;
  chain.words = words;
  chain.initial.resize(static_cast<std::size_t>(words));
  chain.transition.resize(static_cast<std::size_t>(words * words));
  Rng rng(seed);
  detail::sample_peaked_distribution(rng, words, chain.initial.data());
  for (std::int64_t j = 0; j < words; ++j)
    detail::sample_peaked_distribution(rng, words,
                                       &chain.transition[static_cast<std::size_t>(j * words)]);
  return chain;
}

// kChainNoiseScale controls how far a fully private user (alpha = 1) can
// drift: each entry of the global chain is multiplied by
// exp(alpha * kChainNoiseScale * u) with u uniform in (-1, 1], then the
// row is renormalized.
inline constexpr double kChainNoiseScale = 2.0;

inline MarkovChain perturb_chain(const MarkovChain& global, double alpha,
                                 std::uint64_t user_seed) {
  MarkovChain user = global;
  Rng rng(user_seed);
  const double scale = alpha * kChainNoiseScale;
  auto perturb = [&](std::int64_t n, double* row) {
    for (std::int64_t i = 0; i < n; ++i)
      row[i] *= std::exp(scale * rng.symmetric());
    detail::normalize_row(n, row);
  };
  perturb(user.words, user.initial.data());
  for (std::int64_t j = 0; j < user.words; ++j)
    perturb(user.words, &user.transition[static_cast<std::size_t>(j * user.words)]);
  return user;
}

// (1 - alpha) * global + alpha * user, elementwise.
inline MarkovChain mix_chains(const MarkovChain& global,
                              const MarkovChain& user, double alpha) {
  MarkovChain mixed = global;
  for (std::size_t i = 0; i < mixed.initial.size(); ++i)
    mixed.initial[i] = (1.0 - alpha) * global.initial[i] + alpha * user.initial[i];
  for (std::size_t i = 0; i < mixed.transition.size(); ++i)
    mixed.transition[i] =
        (1.0 - alpha) * global.transition[i] + alpha * user.transition[i];
  return mixed;
}

// One user's effective language source.
struct UserSource {
  std::int64_t user_index = 0;
  MarkovChain mixed;
};

inline UserSource make_user_source(const MarkovChain& global,
                                   const PopulationSpec& spec,
                                   std::int64_t user_index) {
  const std::uint64_t chain_seed =
      derive_stream(derive_seed(spec.seed, "user-chain"),
                    static_cast<std::uint64_t>(user_index));
  const MarkovChain user = perturb_chain(global, spec.alpha, chain_seed);
  return {user_index, mix_chains(global, user, spec.alpha)};
}

// Word ids from the chain are offset past the reserved ids.
inline Sentence sample_sentence(const MarkovChain& chain, Rng& rng,
                                std::int64_t len) {
  Sentence s;
  s.reserve(static_cast<std::size_t>(len));
  std::int64_t word =
      detail::sample_categorical(rng, chain.words, chain.initial.data());
  s.push_back(static_cast<std::int32_t>(word + kReservedTokens));
  for (std::int64_t i = 1; i < len; ++i) {
    word = detail::sample_categorical(rng, chain.words, chain.row(word));
    s.push_back(static_cast<std::int32_t>(word + kReservedTokens));
  }
  return s;
}

inline std::string synthetic_client_id(std::int64_t index) {
  std::string digits = std::to_string(index);
  const std::size_t width = 6;
  if (digits.size() < width)
    digits.insert(0, width - digits.size(), '0');
  return "user" + digits;
}

// Every user draws from a dedicated stream derived from (seed, index),
// so parallel and serial generation agree bit-exactly.
inline std::vector<ClientDataset> generate_population(
    const PopulationSpec& spec, unsigned threads = 1) {
  spec.validate();
  const MarkovChain global =
      build_global_chain(spec.words(), derive_seed(spec.seed, "global-chain"));

  std::vector<ClientDataset> population(static_cast<std::size_t>(spec.users));
  parallel_for(spec.users, threads, [&](std::int64_t u) {
    const UserSource source = make_user_source(global, spec, u);
    Rng rng(derive_stream(derive_seed(spec.seed, "user-data"),
                          static_cast<std::uint64_t>(u)));
    ClientDataset& client = population[static_cast<std::size_t>(u)];
    client.id = synthetic_client_id(u);
    client.index = u;
    const std::int64_t sentences =
        rng.int_in(spec.sentences_min, spec.sentences_max);
    client.sentences.reserve(static_cast<std::size_t>(sentences));
    for (std::int64_t i = 0; i < sentences; ++i) {
      const std::int64_t len =
          rng.int_in(spec.sentence_len_min, spec.sentence_len_max);
      client.sentences.push_back(sample_sentence(source.mixed, rng, len));
    }
  });
  return population;
}

// Vocabulary for synthetic populations: reserved tokens then zero-padded
// word names, so the written vocab file is stable for a given V.
inline Vocabulary synthetic_vocabulary(std::int64_t vocab_size) {
  if (vocab_size < kReservedTokens + 1)
    throw std::invalid_argument("vocab_size must be >= 4");
  const std::int64_t words = vocab_size - kReservedTokens;
  std::size_t width = std::to_string(words - 1).size();
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(words));
  for (std::int64_t i = 0; i < words; ++i) {
    std::string digits = std::to_string(i);
    if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
    names.push_back("w" + digits);
  }
  return Vocabulary::from_words(names);
}

}  // namespace fedpe

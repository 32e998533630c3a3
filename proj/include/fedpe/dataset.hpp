// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedpe {

// Reserved vocabulary ids. Stored sentences never contain BOS or EOS;
// the model inserts them structurally (BOS as first input, EOS as last
// target). OOV is an ordinary token id that mapping may produce.
constexpr std::int32_t kBosId = 0;
constexpr std::int32_t kEosId = 1;
constexpr std::int32_t kOovId = 2;
constexpr std::int64_t kReservedTokens = 3;

using Sentence = std::vector<std::int32_t>;

// One simulated device's local data. `sentences` is in temporal order
// and that order is load-bearing: train/test splits and fine-tuning
// batches walk it front to back.
struct ClientDataset {
  std::string id;
  std::int64_t index = 0;  // position in the id-sorted population
  std::vector<Sentence> sentences;

  std::int64_t sentence_count() const {
    return static_cast<std::int64_t>(sentences.size());
  }

  // Each sentence contributes len(words) + 1 prediction targets (the
  // trailing EOS).
  std::int64_t target_token_count() const {
    std::int64_t n = 0;
    for (const auto& s : sentences) n += static_cast<std::int64_t>(s.size()) + 1;
    return n;
  }
};

}  // namespace fedpe

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedpe/dataset.hpp"
#include "fedpe/errors.hpp"

namespace fedpe {

inline constexpr const char* kBosToken = "<bos>";
inline constexpr const char* kEosToken = "<eos>";
inline constexpr const char* kOovToken = "<oov>";

// Dense token<->id bijection with the three reserved tokens pinned to
// ids 0..2. Unknown tokens map to OOV on lookup.
class Vocabulary {
 public:
  Vocabulary() { append_reserved(); }

  static Vocabulary from_words(std::span<const std::string> words) {
    Vocabulary v;
    for (const auto& w : words) v.add_word(w);
    return v;
  }

  void add_word(const std::string& w) {
    if (w == kBosToken || w == kEosToken || w == kOovToken)
      throw ConfigError("vocabulary word collides with reserved token: " + w);
    auto [it, inserted] =
        ids_.emplace(w, static_cast<std::int32_t>(tokens_.size()));
    if (!inserted) throw ConfigError("duplicate vocabulary word: " + w);
    tokens_.push_back(w);
  }

  std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }

  const std::string& token(std::int32_t id) const {
    if (id < 0 || id >= size())
      throw ConfigError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
  }

  // OOV for anything unmapped, including the reserved literals themselves.
  std::int32_t id_or_oov(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kOovId : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void append_reserved() {
    tokens_ = {kBosToken, kEosToken, kOovToken};
    ids_ = {{kBosToken, kBosId}, {kEosToken, kEosId}, {kOovToken, kOovId}};
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

}  // namespace fedpe

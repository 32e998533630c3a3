// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedpe/dataset.hpp"
#include "fedpe/errors.hpp"
#include "fedpe/vocab.hpp"

namespace fedpe {

// Corpus format, both directions: JSONL, one client per line,
//   {"client_id": "...", "sentences": [["token", ...], ...]}
// with sentences in temporal order. Clients are sorted by id on load and
// assigned dense indices; all id-ordering contracts downstream rely on
// that.

inline void atomic_write(const std::filesystem::path& path,
                         const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string());
}

inline std::string corpus_to_jsonl(const std::vector<ClientDataset>& clients,
                                   const Vocabulary& vocab) {
  std::string out;
  for (const auto& client : clients) {
    nlohmann::json sentences = nlohmann::json::array();
    for (const auto& s : client.sentences) {
      nlohmann::json words = nlohmann::json::array();
      for (std::int32_t id : s) words.push_back(vocab.token(id));
      sentences.push_back(std::move(words));
    }
    nlohmann::json line;
    line["client_id"] = client.id;
    line["sentences"] = std::move(sentences);
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline void write_corpus_jsonl(const std::filesystem::path& path,
                               const std::vector<ClientDataset>& clients,
                               const Vocabulary& vocab) {
  atomic_write(path, corpus_to_jsonl(clients, vocab));
}

namespace detail {

struct RawClient {
  std::string id;
  std::vector<std::vector<std::string>> sentences;
};

inline std::string trim_ws(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<RawClient> read_raw_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus: " + path.string());
  std::vector<RawClient> raw;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim_ws(line).empty()) continue;
    const std::string where =
        path.string() + ":" + std::to_string(lineno) + ": ";
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where + "malformed JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("client_id") ||
        !doc.contains("sentences") || !doc["client_id"].is_string() ||
        !doc["sentences"].is_array())
      throw ConfigError(where + "expected {\"client_id\", \"sentences\"}");
    RawClient client;
    client.id = doc["client_id"].get<std::string>();
    if (!seen_ids.insert(client.id).second)
      throw ConfigError(where + "duplicate client_id `" + client.id + "`");
    if (doc["sentences"].empty())
      throw ConfigError(where + "client has no sentences");
    for (const auto& sent : doc["sentences"]) {
      if (!sent.is_array() || sent.empty())
        throw ConfigError(where + "each sentence must be a non-empty array");
      std::vector<std::string> words;
      words.reserve(sent.size());
      for (const auto& w : sent) {
        if (!w.is_string())
          throw ConfigError(where + "sentence tokens must be strings");
        words.push_back(w.get<std::string>());
      }
      client.sentences.push_back(std::move(words));
    }
    raw.push_back(std::move(client));
  }
  if (raw.empty()) throw ConfigError("empty corpus: " + path.string());
  std::sort(raw.begin(), raw.end(),
            [](const RawClient& a, const RawClient& b) { return a.id < b.id; });
  return raw;
}

inline std::vector<ClientDataset> map_clients(std::vector<RawClient> raw,
                                              const Vocabulary& vocab) {
  std::vector<ClientDataset> clients;
  clients.reserve(raw.size());
  std::int64_t index = 0;
  for (auto& r : raw) {
    ClientDataset c;
    c.id = std::move(r.id);
    c.index = index++;
    c.sentences.reserve(r.sentences.size());
    for (auto& sent : r.sentences) {
      Sentence s;
      s.reserve(sent.size());
      for (const auto& w : sent) s.push_back(vocab.id_or_oov(w));
      c.sentences.push_back(std::move(s));
    }
    clients.push_back(std::move(c));
  }
  return clients;
}

}  // namespace detail

// Frequency-built vocabulary: the top (vocab_size - 3) tokens by count,
// ties broken lexicographically; everything else maps to OOV. Reserved
// literals appearing as corpus words are never added, so they also land
// on OOV.
inline std::pair<Vocabulary, std::vector<ClientDataset>> ingest_corpus(
    const std::filesystem::path& path, std::int64_t vocab_size) {
  if (vocab_size < kReservedTokens + 1)
    throw ConfigError("vocab_size must be >= 4");
  auto raw = detail::read_raw_corpus(path);

  std::unordered_map<std::string, std::int64_t> freq;
  for (const auto& client : raw)
    for (const auto& sent : client.sentences)
      for (const auto& w : sent)
        if (w != kBosToken && w != kEosToken && w != kOovToken) ++freq[w];

  std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(),
                                                           freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t keep =
      std::min(ranked.size(), static_cast<std::size_t>(vocab_size - kReservedTokens));
  std::vector<std::string> words;
  words.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) words.push_back(ranked[i].first);

  Vocabulary vocab = Vocabulary::from_words(words);
  return {vocab, detail::map_clients(std::move(raw), vocab)};
}

// Re-reads a corpus against an existing vocabulary (the gen-data +
// train-global path); unknown tokens map to OOV.
inline std::vector<ClientDataset> load_corpus_with_vocab(
    const std::filesystem::path& path, const Vocabulary& vocab) {
  return detail::map_clients(detail::read_raw_corpus(path), vocab);
}

// Vocabulary file: one token per line, line number = id, reserved first.
inline void save_vocabulary(const std::filesystem::path& path,
                            const Vocabulary& vocab) {
  std::string out;
  for (const auto& t : vocab.tokens()) {
    out += t;
    out += '\n';
  }
  atomic_write(path, out);
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  if (tokens.size() < static_cast<std::size_t>(kReservedTokens) ||
      tokens[0] != kBosToken || tokens[1] != kEosToken || tokens[2] != kOovToken)
    throw MismatchError("vocabulary file missing reserved tokens: " +
                        path.string());
  std::vector<std::string> words(tokens.begin() + kReservedTokens, tokens.end());
  return Vocabulary::from_words(words);
}

}  // namespace fedpe

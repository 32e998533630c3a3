// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedpe/errors.hpp"
#include "fedpe/rng.hpp"

namespace fedpe {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

// Plain-text key-value file: one `key = value` per line, dotted section
// keys, full-line '#' comments, blank lines ignored. Insertion order is
// preserved for serialization; keys are unique.
class KeyValueFile {
 public:
  static KeyValueFile parse_string(const std::string& text,
                                   const std::string& origin = "<string>") {
    KeyValueFile kv;
    std::istringstream in(text);
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string_view t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": expected `key = value`");
      const std::string key{trim(t.substr(0, eq))};
      const std::string value{trim(t.substr(eq + 1))};
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (kv.find(key))
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": duplicate key `" + key + "`");
      kv.entries_.emplace_back(key, value);
    }
    return kv;
  }

  static KeyValueFile parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path.string());
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    entries_.emplace_back(key, value);
  }

  std::optional<std::string> find(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    return std::nullopt;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
    return out;
  }

  // Sorted-key serialization; input formatting never changes the hash.
  std::string canonical() const {
    auto sorted = entries_;
    std::sort(sorted.begin(), sorted.end());
    std::string out;
    for (const auto& [k, v] : sorted) out += k + "=" + v + "\n";
    return out;
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::int64_t parse_i64(std::string_view s, const std::string& what) {
  std::int64_t v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ConfigError(what + ": not an integer: `" + std::string(s) + "`");
  return v;
}

inline double parse_f64(std::string_view s, const std::string& what) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last)
    throw ConfigError(what + ": not a number: `" + std::string(s) + "`");
  return v;
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::string_view piece =
        comma == std::string_view::npos ? s.substr(start)
                                        : s.substr(start, comma - start);
    const std::string_view t = trim(piece);
    if (!t.empty()) parts.emplace_back(t);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

inline std::vector<double> parse_f64_list(std::string_view s,
                                          const std::string& what) {
  std::vector<double> out;
  for (const auto& piece : split_list(s)) out.push_back(parse_f64(piece, what));
  return out;
}

inline std::vector<std::int64_t> parse_i64_list(std::string_view s,
                                                const std::string& what) {
  std::vector<std::int64_t> out;
  for (const auto& piece : split_list(s)) out.push_back(parse_i64(piece, what));
  return out;
}

}  // namespace fedpe

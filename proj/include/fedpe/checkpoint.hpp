// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "fedpe/errors.hpp"
#include "fedpe/model.hpp"

namespace fedpe {

// Flat binary checkpoint: header V, D, H as 64-bit little-endian counts,
// then every scalar as a 64-bit IEEE-754 little-endian double, tensors in
// field order (embedding, input gate w/b, output gate w/b, cell w/b,
// projection), each tensor row-major.
static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

inline void save_checkpoint(const std::filesystem::path& path,
                            const ParamSet& params) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    const std::int64_t header[3] = {params.vocab_size, params.embedding_dim,
                                    params.hidden_units};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    for (const auto* t : params.tensors())
      out.write(reinterpret_cast<const char*>(t->data()),
                static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " -> " + path.string());
}

inline ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::int64_t header[3] = {0, 0, 0};
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw MismatchError("truncated checkpoint header: " + path.string());
  if (header[0] < 1 || header[1] < 1 || header[2] < 1)
    throw MismatchError("invalid checkpoint dimensions: " + path.string());
  ParamSet p = ParamSet::zeros({header[0], header[1], header[2], 0});
  for (auto* t : p.tensors()) {
    in.read(reinterpret_cast<char*>(t->data()),
            static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!in) throw MismatchError("truncated checkpoint data: " + path.string());
  }
  char extra;
  if (in.read(&extra, 1))
    throw MismatchError("trailing bytes in checkpoint: " + path.string());
  return p;
}

}  // namespace fedpe

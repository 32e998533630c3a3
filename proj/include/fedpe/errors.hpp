// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fedpe {

// Error taxonomy mirrors the CLI exit codes:
//   ConfigError   -> 1 (bad config, bad input content, validation)
//   IoError       -> 2 (cannot read/write/create)
//   MismatchError -> 3 (artifacts disagree: checkpoint/vocab/config dims)
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A client with too little local data to split; callers treat this as a
// per-client skip, not a failure.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fedpe

// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scanstereo {

/// Tensor shapes disagree with an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A NaN or Inf appeared in an input or intermediate. `index()` locates the
/// first offending element in the operation's natural ordering (scan step,
/// flat pixel index, iteration number).
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t index)
      : std::runtime_error(what + " (at index " + std::to_string(index) + ")"),
        index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Invalid user configuration (scene too large, bad flag combination, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Filesystem failure. Carries the offending path.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& what, std::string path)
      : std::runtime_error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace scanstereo

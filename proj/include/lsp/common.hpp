// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lsp {

// Thrown when a run configuration is malformed (unknown key, bad value).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a computation produces non-finite values or diverges.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on file read/write failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Contract violations (dimension mismatch, bad argument) use
// std::invalid_argument directly.

// SplitMix64 step; used to derive independent seeds from a master seed.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic sub-seed for a (purpose, index) pair under a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag,
                                 std::uint64_t index = 0) {
  return mix64(mix64(master ^ mix64(tag)) ^ index);
}

}  // namespace lsp

// Copyright 2026 lspkit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef LSP_SHA256_HPP_
#define LSP_SHA256_HPP_

#include <string>
#include <string_view>

namespace lsp {

// Lowercase hex digest of the SHA-256 hash of data.
std::string sha256_hex(std::string_view data);

// Content-addressed hash of "blob <size>\0<data>", used to fingerprint run
// inputs in metadata files.
std::string blob_hash(std::string_view data);

}  // namespace lsp

#endif  // LSP_SHA256_HPP_

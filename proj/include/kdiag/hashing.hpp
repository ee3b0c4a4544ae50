// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace kdiag::hashing {

// Hex-encoded SHA-256 of the given bytes.
std::string sha256_hex(std::string_view data);

// Hex-encoded SHA-256 of a file's contents. Throws kdiag::Error on IO failure.
std::string sha256_hex_file(const std::filesystem::path& path);

// Short content id: first 16 hex chars of SHA-256. Plenty at corpus scale and
// keeps record files readable.
std::string content_id(std::string_view data);

}  // namespace kdiag::hashing

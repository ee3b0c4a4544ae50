// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace kdiag::jsonl {

// One rejected or unreadable input record, keyed by 1-based line number.
struct RecordError {
  size_t line = 0;
  std::string reason;
};

// Calls fn(line_number, parsed) for every well-formed line; blank lines are
// skipped. Parse failures go into the returned error list and reading
// continues.
std::vector<RecordError> for_each_record(
    const std::filesystem::path& path,
    const std::function<void(size_t, const nlohmann::json&)>& fn);

// Same, over an in-memory stream body (used by tests).
std::vector<RecordError> for_each_record_text(
    const std::string& body,
    const std::function<void(size_t, const nlohmann::json&)>& fn);

std::vector<nlohmann::json> read_all(const std::filesystem::path& path);

// Serializes one object per line.
std::string to_lines(const std::vector<nlohmann::json>& records);

// Writes via a temp file in the same directory and renames into place.
void write_atomic(const std::filesystem::path& path, const std::string& content);

void write_records_atomic(const std::filesystem::path& path,
                          const std::vector<nlohmann::json>& records);

std::string read_file(const std::filesystem::path& path);

}  // namespace kdiag::jsonl

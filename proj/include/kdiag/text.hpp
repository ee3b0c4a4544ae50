// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kdiag::text {

// Trims ASCII whitespace from both ends.
std::string trim(std::string_view s);

// ASCII-lowercases, trims, and collapses internal whitespace runs to a single
// space. This is the dedup/normalization key for corpus text.
std::string normalize(std::string_view s);

// Whitespace-delimited token count, never less than 1 for non-empty text.
int token_count(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);

bool contains(std::string_view haystack, std::string_view needle);

// "(A)", "(B)", ... for option indices 0..25.
std::string option_letter(int index);

// Index for a letter found inside "(X)" markers, -1 if out of range.
int letter_index(char letter);

// First "(X)"-style option letter in s, or -1 when none is present.
int first_option_marker(std::string_view s);

// Fixed two-decimal formatting used for percent metrics.
std::string format_percent(double value);

// FNV-1a 64-bit over bytes; a fully specified hash used wherever
// cross-platform determinism matters (mock backends, stub embedder).
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 14695981039346656037ull);

// Uniform double in [0, 1) from a 64-bit hash.
double unit_double(std::uint64_t h);

}  // namespace kdiag::text

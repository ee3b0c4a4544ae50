// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace kdiag {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace kdiag

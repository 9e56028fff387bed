// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace deltaquant {

/// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

/// Strict parsers used for metadata and config values.
double parse_double(std::string_view text);
std::uint64_t parse_uint(std::string_view text);
bool parse_bool(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace deltaquant

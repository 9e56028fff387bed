// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace deltaquant::cli {

/// Flat `section.key = value` lines. Blank lines and lines starting with
/// '#' are skipped.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Turns config entries into command-line arguments for `subcommand`.
/// Keys that belong to other subcommands are dropped; keys nobody knows
/// throw a usage error.
std::vector<std::string> config_to_args(const std::map<std::string, std::string>& entries,
                                        const std::string& subcommand);

}  // namespace deltaquant::cli

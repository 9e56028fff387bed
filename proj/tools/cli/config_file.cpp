// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "config_file.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "deltaquant/error.hpp"
#include "deltaquant/format.hpp"

namespace deltaquant::cli {

namespace {

enum class Kind { kValue, kFlag, kInvertedFlag };

struct KeySpec {
  const char* key;
  const char* flag;
  Kind kind;
  std::set<std::string> commands;
};

const std::vector<KeySpec>& key_table() {
  static const std::set<std::string> all{"train-toy", "importance", "quantize",
                                         "eval",      "ablate",     "curve"};
  static const std::vector<KeySpec> table{
      {"train.dims", "--dims", Kind::kValue, {"train-toy"}},
      {"train.steps", "--steps", Kind::kValue, {"train-toy"}},
      {"train.seed", "--seed", Kind::kValue, {"train-toy"}},
      {"train.data_seed", "--data-seed", Kind::kValue, {"train-toy"}},
      {"train.learning_rate", "--lr", Kind::kValue, {"train-toy"}},
      {"train.batch_size", "--batch-size", Kind::kValue, {"train-toy"}},
      {"train.snapshot_every", "--snapshot-every", Kind::kValue, {"train-toy"}},
      {"train.calib_rows", "--calib-rows", Kind::kValue, {"train-toy"}},
      {"train.calib_seed", "--calib-seed", Kind::kValue, {"train-toy"}},
      {"mapping.signal", "--signal", Kind::kValue, {"importance", "curve"}},
      {"mapping.y_min", "--y-min", Kind::kValue, {"importance", "ablate", "curve"}},
      {"mapping.y_max", "--y-max", Kind::kValue, {"importance", "ablate", "curve"}},
      {"mapping.zero_epsilon", "--zero-epsilon", Kind::kValue, {"importance", "ablate", "curve"}},
      {"mapping.slices", "--slices", Kind::kValue, {"importance", "ablate", "curve"}},
      {"mapping.multiply_activation", "--multiply-activation", Kind::kFlag,
       {"importance", "ablate", "curve"}},
      {"quant.bits", "--bits", Kind::kValue, {"quantize", "ablate", "curve"}},
      {"quant.group_size", "--group-size", Kind::kValue, {"quantize", "ablate", "curve"}},
      {"quant.protect_fraction", "--protect", Kind::kValue, {"quantize", "curve"}},
      {"search.grid_points", "--grid-points", Kind::kValue, {"quantize", "curve"}},
      {"search.alpha_lo", "--alpha-lo", Kind::kValue, {"quantize", "curve"}},
      {"search.alpha_hi", "--alpha-hi", Kind::kValue, {"quantize", "curve"}},
      {"search.normalize_scale", "--no-normalize", Kind::kInvertedFlag, {"quantize", "curve"}},
      {"search.max_calib_rows", "--max-calib-rows", Kind::kValue, {"quantize", "eval", "curve"}},
      {"eval.seed", "--eval-seed", Kind::kValue, {"eval", "ablate"}},
      {"eval.rows", "--eval-rows", Kind::kValue, {"eval", "ablate"}},
      {"ablate.signals", "--signals", Kind::kValue, {"ablate"}},
      {"ablate.fractions", "--fractions", Kind::kValue, {"ablate"}},
      {"run.threads", "--threads", Kind::kValue, all},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config file '" + path.string() + "'");
  std::map<std::string, std::string> entries;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    const std::string where = path.string() + ":" + std::to_string(number);
    if (eq == std::string::npos) {
      fail(ErrorCode::kInvalidArgument, where + ": expected 'section.key = value'");
    }
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    if (key.find('.') == std::string::npos) {
      fail(ErrorCode::kInvalidArgument, where + ": key '" + key + "' lacks a section prefix");
    }
    if (!entries.emplace(key, value).second) {
      fail(ErrorCode::kInvalidArgument, where + ": duplicate key '" + key + "'");
    }
  }
  return entries;
}

std::vector<std::string> config_to_args(const std::map<std::string, std::string>& entries,
                                        const std::string& subcommand) {
  std::vector<std::string> args;
  for (const auto& [key, value] : entries) {
    const auto& table = key_table();
    const auto it = std::find_if(table.begin(), table.end(),
                                 [&](const KeySpec& s) { return key == s.key; });
    if (it == table.end()) fail(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
    if (!it->commands.count(subcommand)) continue;
    switch (it->kind) {
      case Kind::kValue:
        args.push_back(std::string(it->flag) + "=" + value);
        break;
      case Kind::kFlag:
        args.push_back(std::string(it->flag) + "=" + (parse_bool(value) ? "true" : "false"));
        break;
      case Kind::kInvertedFlag:
        args.push_back(std::string(it->flag) + "=" + (parse_bool(value) ? "false" : "true"));
        break;
    }
  }
  return args;
}

}  // namespace deltaquant::cli

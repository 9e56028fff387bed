// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deltaquant/matrix.hpp"
#include "deltaquant/tensor_store.hpp"
#include "deltaquant/toy_model.hpp"

namespace deltaquant::signals {

enum class Signal { kMagnitude, kBothEnds, kBothEndsZero, kMid, kActivationSq };

/// Canonical names: magnitude, both-ends, both-ends-zero, mid, activation-sq.
/// Underscore spellings are accepted on input.
std::string_view to_string(Signal signal);
Signal parse_signal(std::string_view text);

bool needs_deltas(Signal signal);

struct MappingConfig {
  double y_min = 1.0;
  double y_max = 10.0;
  Signal signal = Signal::kBothEndsZero;
  double zero_epsilon = 0.0;
  std::size_t slices = 1;
  bool multiply_activation = false;

  void validate() const;
};

/// Global statistics over the union of all module updates. Updates at or
/// below zero_epsilon count as zero and are excluded from the *_positive
/// fields. The *_all fields include zeros and feed the mapping variant that
/// does not treat zeros separately.
struct DeltaStats {
  double min_positive = 0.0;
  double median_positive = 0.0;
  double max = 0.0;
  double min_all = 0.0;
  double median_all = 0.0;
  std::uint64_t zero_count = 0;
  std::uint64_t total_count = 0;
  double zero_fraction = 0.0;
};

struct ImportanceVector {
  std::string module;
  std::vector<float> scores;  // one per input channel, finite and > 0
  MappingConfig config;
};

/// |post - pre| for every `<module>.weight`, stored as `<module>.delta`.
store::TensorMap compute_delta(const store::TensorMap& pre, const store::TensorMap& post);

/// Median is the lower middle element for even counts.
DeltaStats global_delta_stats(const store::TensorMap& deltas, double zero_epsilon);

/// Two restricted quadratics meeting at the median: y_max at the smallest and
/// largest update, y_min at the median. Zeros are ordinary points here.
double map_both_ends(double delta, const DeltaStats& stats, const MappingConfig& cfg);

/// Same shape fitted on positive updates only; zero updates map to y_min.
double map_both_ends_zero(double delta, const DeltaStats& stats, const MappingConfig& cfg);

/// Reflection of map_both_ends: peaks at the median.
double map_mid(double delta, const DeltaStats& stats, const MappingConfig& cfg);

/// Mean over `slices` contiguous row bands of the per-column zero count.
/// Bands follow an even split where earlier bands take the remainder rows.
std::vector<double> count_zeros_per_channel(const Matrix& delta, double zero_epsilon,
                                            std::size_t slices);

/// Per-input-channel importance of one module.
/// `stats` is required for every delta-based signal; `calib` for
/// activation-sq and for multiply_activation.
ImportanceVector importance(const std::string& module, const Matrix& weight_delta,
                            const DeltaStats* stats, const MappingConfig& cfg,
                            const toy::ChannelStats* calib);

struct ImportanceSet {
  std::map<std::string, ImportanceVector> modules;
  std::optional<DeltaStats> stats;
};

/// Deltas, one shared global DeltaStats, then importance for every module.
ImportanceSet importance_all(const store::TensorMap& pre, const store::TensorMap& post,
                             const MappingConfig& cfg, const toy::CalibrationSet* calib);

store::TensorMap importance_to_container(const ImportanceSet& set, const MappingConfig& cfg);
std::map<std::string, ImportanceVector> importance_from_container(const store::TensorMap& map);

/// Names of the linear modules (`<module>.weight`) in a checkpoint.
std::vector<std::string> weight_modules(const store::TensorMap& checkpoint);

}  // namespace deltaquant::signals

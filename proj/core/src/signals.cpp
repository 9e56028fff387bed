// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltaquant/signals.hpp"

#include <algorithm>
#include <cmath>

#include "deltaquant/error.hpp"
#include "deltaquant/format.hpp"

namespace deltaquant::signals {

namespace {

constexpr std::string_view kWeightSuffix = ".weight";
constexpr std::string_view kDeltaSuffix = ".delta";
constexpr std::string_view kImportanceSuffix = ".importance";

/// Restricted quadratic pair on [lo, hi] with its minimum at mid.
double both_ends_quadratic(double d, double lo, double mid, double hi, const MappingConfig& cfg) {
  const double span = cfg.y_max - cfg.y_min;
  if (d >= hi && !(hi - mid > 0.0)) return cfg.y_max;
  if (d <= mid) {
    const double width = mid - lo;
    if (!(width > 0.0)) return cfg.y_max;
    const double r = (mid - d) / width;
    return cfg.y_min + span * r * r;
  }
  const double width = hi - mid;
  if (!(width > 0.0)) return cfg.y_max;
  const double r = (d - mid) / width;
  return cfg.y_min + span * r * r;
}

/// Replaces non-positive entries with the smallest positive entry (1 if none).
void floor_to_smallest_positive(std::vector<double>& v) {
  double smallest = 0.0;
  for (double x : v) {
    if (x > 0.0 && (smallest == 0.0 || x < smallest)) smallest = x;
  }
  if (smallest == 0.0) smallest = 1.0;
  for (double& x : v) {
    if (!(x > 0.0)) x = smallest;
  }
}

template <typename Fn>
std::vector<double> column_mean(const Matrix& delta, Fn&& f) {
  std::vector<double> acc(delta.cols(), 0.0);
  for (std::size_t r = 0; r < delta.rows(); ++r) {
    const auto row = delta.row(r);
    for (std::size_t c = 0; c < delta.cols(); ++c) acc[c] += f(static_cast<double>(row[c]));
  }
  for (double& a : acc) a /= static_cast<double>(delta.rows());
  return acc;
}

std::string strip_suffix(const std::string& name, std::string_view suffix) {
  return name.substr(0, name.size() - suffix.size());
}

}  // namespace

std::string_view to_string(Signal signal) {
  switch (signal) {
    case Signal::kMagnitude: return "magnitude";
    case Signal::kBothEnds: return "both-ends";
    case Signal::kBothEndsZero: return "both-ends-zero";
    case Signal::kMid: return "mid";
    case Signal::kActivationSq: return "activation-sq";
  }
  return "unknown";
}

Signal parse_signal(std::string_view text) {
  std::string s(text);
  std::replace(s.begin(), s.end(), '_', '-');
  for (Signal sig : {Signal::kMagnitude, Signal::kBothEnds, Signal::kBothEndsZero, Signal::kMid,
                     Signal::kActivationSq}) {
    if (s == to_string(sig)) return sig;
  }
  fail(ErrorCode::kInvalidArgument,
       "unknown signal '" + std::string(text) +
           "' (expected magnitude, both-ends, both-ends-zero, mid, activation-sq)");
}

bool needs_deltas(Signal signal) { return signal != Signal::kActivationSq; }

void MappingConfig::validate() const {
  if (!(y_min > 0.0) || !(y_max > y_min) || !std::isfinite(y_max)) {
    fail(ErrorCode::kInvalidArgument, "mapping requires y_max > y_min > 0");
  }
  if (!(zero_epsilon >= 0.0)) fail(ErrorCode::kInvalidArgument, "zero_epsilon must be >= 0");
  if (slices < 1) fail(ErrorCode::kInvalidArgument, "slices must be >= 1");
}

store::TensorMap compute_delta(const store::TensorMap& pre, const store::TensorMap& post) {
  store::check_compatible(pre, post);
  store::TensorMap out;
  for (const auto& module : weight_modules(post)) {
    const std::string name = module + std::string(kWeightSuffix);
    const auto a = pre.at(name).floats();
    const auto b = post.at(name).floats();
    std::vector<float> d(a.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::fabs(b[i] - a[i]);
    out.put(module + std::string(kDeltaSuffix),
            store::Tensor::from_floats(post.at(name).shape(), std::move(d)));
  }
  out.meta["kind"] = "delta";
  return out;
}

DeltaStats global_delta_stats(const store::TensorMap& deltas, double zero_epsilon) {
  if (deltas.tensors.empty()) fail(ErrorCode::kInvalidArgument, "no delta tensors");
  std::vector<double> all;
  std::vector<double> positive;
  for (const auto& [name, t] : deltas.tensors) {
    for (float v : t.floats()) {
      if (!(v >= 0.0f)) fail(ErrorCode::kInvalidArgument, "delta '" + name + "' has a negative entry");
      const double d = v;
      if (d <= zero_epsilon) {
        all.push_back(0.0);
      } else {
        all.push_back(d);
        positive.push_back(d);
      }
    }
  }
  if (positive.empty()) {
    fail(ErrorCode::kDegenerateDeltas, "every weight update is zero; pre and post checkpoints match");
  }
  std::sort(positive.begin(), positive.end());
  std::sort(all.begin(), all.end());
  DeltaStats s;
  s.total_count = all.size();
  s.zero_count = all.size() - positive.size();
  s.zero_fraction = static_cast<double>(s.zero_count) / static_cast<double>(s.total_count);
  s.min_positive = positive.front();
  s.median_positive = positive[(positive.size() - 1) / 2];
  s.max = positive.back();
  s.min_all = all.front();
  s.median_all = all[(all.size() - 1) / 2];
  return s;
}

double map_both_ends(double delta, const DeltaStats& stats, const MappingConfig& cfg) {
  const double d = std::clamp(delta, stats.min_all, stats.max);
  return both_ends_quadratic(d, stats.min_all, stats.median_all, stats.max, cfg);
}

double map_both_ends_zero(double delta, const DeltaStats& stats, const MappingConfig& cfg) {
  if (delta <= cfg.zero_epsilon) return cfg.y_min;
  const double d = std::clamp(delta, stats.min_positive, stats.max);
  return both_ends_quadratic(d, stats.min_positive, stats.median_positive, stats.max, cfg);
}

double map_mid(double delta, const DeltaStats& stats, const MappingConfig& cfg) {
  return cfg.y_min + cfg.y_max - map_both_ends(delta, stats, cfg);
}

std::vector<double> count_zeros_per_channel(const Matrix& delta, double zero_epsilon,
                                            std::size_t slices) {
  if (slices < 1) fail(ErrorCode::kInvalidArgument, "slices must be >= 1");
  if (slices > delta.rows()) {
    fail(ErrorCode::kInvalidArgument, "slices (" + std::to_string(slices) + ") exceeds the " +
                                          std::to_string(delta.rows()) + " rows of the delta");
  }
  const std::size_t base = delta.rows() / slices;
  const std::size_t extra = delta.rows() % slices;
  std::vector<double> sum(delta.cols(), 0.0);
  std::vector<std::uint64_t> band_count(delta.cols());
  std::size_t row = 0;
  for (std::size_t b = 0; b < slices; ++b) {
    const std::size_t band_rows = base + (b < extra ? 1 : 0);
    std::fill(band_count.begin(), band_count.end(), 0);
    for (std::size_t r = 0; r < band_rows; ++r, ++row) {
      const auto values = delta.row(row);
      for (std::size_t c = 0; c < delta.cols(); ++c) {
        if (static_cast<double>(values[c]) <= zero_epsilon) ++band_count[c];
      }
    }
    for (std::size_t c = 0; c < delta.cols(); ++c) sum[c] += static_cast<double>(band_count[c]);
  }
  for (double& s : sum) s /= static_cast<double>(slices);
  return sum;
}

ImportanceVector importance(const std::string& module, const Matrix& weight_delta,
                            const DeltaStats* stats, const MappingConfig& cfg,
                            const toy::ChannelStats* calib) {
  cfg.validate();
  const std::size_t in = weight_delta.cols();
  const bool wants_calib = cfg.signal == Signal::kActivationSq || cfg.multiply_activation;
  if (wants_calib && calib == nullptr) {
    fail(ErrorCode::kMissingInput, "signal '" + std::string(to_string(cfg.signal)) +
                                       "' needs calibration statistics for '" + module + "'");
  }
  if (calib != nullptr && wants_calib &&
      (calib->mean_square.size() != in || calib->mean_abs.size() != in)) {
    fail(ErrorCode::kShapeMismatch, "calibration statistics of '" + module + "' have length " +
                                        std::to_string(calib->mean_square.size()) + ", expected " +
                                        std::to_string(in));
  }
  if (needs_deltas(cfg.signal) && stats == nullptr) {
    fail(ErrorCode::kDegenerateDeltas, "no delta statistics available for '" + module + "'");
  }
  if (needs_deltas(cfg.signal) && weight_delta.rows() == 0) {
    fail(ErrorCode::kInvalidArgument, "delta of '" + module + "' has no rows");
  }

  std::vector<double> scores;
  switch (cfg.signal) {
    case Signal::kMagnitude: {
      scores = column_mean(weight_delta, [](double d) { return d; });
      // An untouched column has mean 0; give it the smallest mean any column
      // with a single minimal update could have.
      const double floor = stats->min_positive / static_cast<double>(weight_delta.rows());
      for (double& s : scores) {
        if (!(s > 0.0)) s = floor;
      }
      break;
    }
    case Signal::kActivationSq:
      scores.assign(calib->mean_square.begin(), calib->mean_square.end());
      floor_to_smallest_positive(scores);
      break;
    case Signal::kBothEnds:
      scores = column_mean(weight_delta, [&](double d) { return map_both_ends(d, *stats, cfg); });
      break;
    case Signal::kMid:
      scores = column_mean(weight_delta, [&](double d) { return map_mid(d, *stats, cfg); });
      break;
    case Signal::kBothEndsZero: {
      scores =
          column_mean(weight_delta, [&](double d) { return map_both_ends_zero(d, *stats, cfg); });
      const auto zeros = count_zeros_per_channel(weight_delta, cfg.zero_epsilon, cfg.slices);
      for (std::size_t c = 0; c < in; ++c) scores[c] *= zeros[c] + 1.0;
      break;
    }
  }
  if (cfg.multiply_activation) {
    std::vector<double> act(calib->mean_abs.begin(), calib->mean_abs.end());
    floor_to_smallest_positive(act);
    for (std::size_t c = 0; c < in; ++c) scores[c] *= act[c];
  }

  ImportanceVector out{module, std::vector<float>(in), cfg};
  for (std::size_t c = 0; c < in; ++c) {
    const float v = static_cast<float>(scores[c]);
    if (!std::isfinite(v) || !(v > 0.0f)) {
      fail(ErrorCode::kNonFinite, "importance of '" + module + "' channel " + std::to_string(c) +
                                      " is not a positive finite float");
    }
    out.scores[c] = v;
  }
  return out;
}

ImportanceSet importance_all(const store::TensorMap& pre, const store::TensorMap& post,
                             const MappingConfig& cfg, const toy::CalibrationSet* calib) {
  cfg.validate();
  const store::TensorMap deltas = compute_delta(pre, post);
  ImportanceSet set;
  if (needs_deltas(cfg.signal)) set.stats = global_delta_stats(deltas, cfg.zero_epsilon);
  for (const auto& module : weight_modules(post)) {
    const Matrix delta = deltas.at(module + std::string(kDeltaSuffix)).to_matrix();
    const toy::ChannelStats* stats = nullptr;
    if (calib != nullptr && calib->stats.count(module)) stats = &calib->stats.at(module);
    if ((cfg.signal == Signal::kActivationSq || cfg.multiply_activation) && stats == nullptr) {
      fail(ErrorCode::kMissingInput, "signal '" + std::string(to_string(cfg.signal)) +
                                         "' needs calibration data (--calib) for '" + module + "'");
    }
    set.modules.emplace(module, importance(module, delta, set.stats ? &*set.stats : nullptr, cfg,
                                           stats));
  }
  return set;
}

store::TensorMap importance_to_container(const ImportanceSet& set, const MappingConfig& cfg) {
  store::TensorMap map;
  for (const auto& [module, iv] : set.modules) {
    map.put(module + std::string(kImportanceSuffix), store::Tensor::from_vector(iv.scores));
  }
  map.meta["kind"] = "importance";
  map.meta["signal"] = std::string(to_string(cfg.signal));
  map.meta["y_min"] = format_number(cfg.y_min);
  map.meta["y_max"] = format_number(cfg.y_max);
  map.meta["slices"] = std::to_string(cfg.slices);
  map.meta["zero_epsilon"] = format_number(cfg.zero_epsilon);
  map.meta["multiply_activation"] = cfg.multiply_activation ? "true" : "false";
  if (set.stats) {
    map.meta["delta_min_positive"] = format_number(set.stats->min_positive);
    map.meta["delta_median_positive"] = format_number(set.stats->median_positive);
    map.meta["delta_max"] = format_number(set.stats->max);
    map.meta["zero_count"] = std::to_string(set.stats->zero_count);
    map.meta["total_count"] = std::to_string(set.stats->total_count);
    map.meta["zero_fraction"] = format_number(set.stats->zero_fraction);
  }
  return map;
}

std::map<std::string, ImportanceVector> importance_from_container(const store::TensorMap& map) {
  MappingConfig cfg;
  if (map.meta.count("signal")) cfg.signal = parse_signal(map.meta.at("signal"));
  if (map.meta.count("y_min")) cfg.y_min = parse_double(map.meta.at("y_min"));
  if (map.meta.count("y_max")) cfg.y_max = parse_double(map.meta.at("y_max"));
  if (map.meta.count("slices")) cfg.slices = parse_uint(map.meta.at("slices"));
  if (map.meta.count("zero_epsilon")) cfg.zero_epsilon = parse_double(map.meta.at("zero_epsilon"));
  if (map.meta.count("multiply_activation")) {
    cfg.multiply_activation = parse_bool(map.meta.at("multiply_activation"));
  }
  std::map<std::string, ImportanceVector> out;
  for (const auto& [name, t] : map.tensors) {
    if (name.size() <= kImportanceSuffix.size() || !name.ends_with(kImportanceSuffix)) continue;
    const std::string module = strip_suffix(name, kImportanceSuffix);
    ImportanceVector iv{module, t.to_vector(), cfg};
    for (float v : iv.scores) {
      if (!std::isfinite(v) || !(v > 0.0f)) {
        fail(ErrorCode::kInvalidTensor, "'" + name + "' holds a non-positive score");
      }
    }
    out.emplace(module, std::move(iv));
  }
  return out;
}

std::vector<std::string> weight_modules(const store::TensorMap& checkpoint) {
  std::vector<std::string> modules;
  for (const auto& [name, t] : checkpoint.tensors) {
    if (name.size() > kWeightSuffix.size() && name.ends_with(kWeightSuffix) && t.rank() == 2) {
      modules.push_back(strip_suffix(name, kWeightSuffix));
    }
  }
  return modules;
}

}  // namespace deltaquant::signals

// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deltaquant/matrix.hpp"
#include "deltaquant/quant.hpp"
#include "deltaquant/signals.hpp"
#include "deltaquant/tensor_store.hpp"
#include "deltaquant/toy_model.hpp"

namespace deltaquant::search {

struct SearchConfig {
  std::size_t grid_points = 20;
  double alpha_lo = 0.0;
  double alpha_hi = 1.0;
  bool normalize_scale = true;
  std::size_t max_calib_rows = 512;
  std::size_t threads = 1;

  void validate() const;
  /// alpha_lo + k (alpha_hi - alpha_lo) / (grid_points - 1); the last point is alpha_hi.
  std::vector<double> grid() const;
};

struct SearchResult {
  std::string module;
  double alpha_star = 0.0;
  std::vector<float> scale;
  std::vector<std::pair<double, double>> loss_curve;  // (alpha, loss)
  double rtn_loss = 0.0;
  double best_loss = 0.0;
};

/// Mean over n * out of ((W_hat - W) x)^2 where W_hat is the scaled RTN
/// reconstruction. No protection is applied.
double quant_loss(const Matrix& weight, const Matrix& calib_inputs, std::span<const float> scale,
                  const quant::QuantConfig& qcfg);

/// raw / sqrt(max(raw) * min(raw)).
std::vector<double> normalize_scale(std::span<const double> raw);

/// Channel scale for one exponent: normalize(I)^alpha, or I^alpha unnormalized.
std::vector<float> scale_for_alpha(std::span<const float> importance, double alpha,
                                   bool normalize);

SearchResult search_scale(const std::string& module, const Matrix& weight,
                          std::span<const float> importance, const Matrix& calib_inputs,
                          const SearchConfig& scfg, const quant::QuantConfig& qcfg);

struct ModelQuantization {
  quant::Artifact artifact;
  std::vector<SearchResult> report;  // module order
};

/// Search, then protect and quantize every `<module>.weight` of `post`.
ModelQuantization quantize_model(const store::TensorMap& post,
                                 const std::map<std::string, signals::ImportanceVector>& importances,
                                 const toy::CalibrationSet& calib, const SearchConfig& scfg,
                                 const quant::QuantConfig& qcfg);

/// One JSON object per line.
std::string report_to_jsonl(const std::vector<SearchResult>& report, const SearchConfig& scfg);

}  // namespace deltaquant::search

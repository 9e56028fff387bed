// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "deltaquant/quant.hpp"
#include "deltaquant/search.hpp"
#include "deltaquant/signals.hpp"
#include "deltaquant/tensor_store.hpp"
#include "deltaquant/toy_model.hpp"

namespace deltaquant::eval {

struct EvalConfig {
  std::uint64_t eval_seed = 1234;
  std::size_t eval_rows = 256;
  std::size_t max_calib_rows = 512;
  std::size_t threads = 1;
};

struct ModuleErrors {
  double rtn_mse = 0.0;
  double searched_mse = 0.0;
  double protected_mse = 0.0;
};

struct EndToEnd {
  double output_mse = 0.0;
  double relative_frobenius = 0.0;
};

struct EvalReport {
  std::map<std::string, ModuleErrors> per_module;
  EndToEnd end_to_end;
  quant::QuantConfig quant;
  EvalConfig config;

  std::string to_json() const;
};

/// Mean over n * out of (x W^T - x W_hat^T)^2, accumulated in double.
double output_mse(const Matrix& weight, const Matrix& approx, const Matrix& inputs);

/// Mean of (W_hat - W)^2 over all weights.
double weight_mse(const Matrix& weight, const Matrix& approx);

/// Swaps every weight for its dequantized version; biases stay in float.
toy::ToyModel apply_artifact(const toy::ToyModel& model, const quant::Artifact& artifact);

/// Float model against the quantized one on a fresh seeded batch.
EndToEnd end_to_end(const toy::ToyModel& model, const quant::Artifact& artifact,
                    const EvalConfig& cfg);

/// Per module, three reconstructions of W' all sharing the artifact's
/// protection mask: ones scale (rtn), the searched scale re-quantized from
/// W' (searched), and the stored artifact itself (protected).
EvalReport layer_report(const store::TensorMap& post, const quant::Artifact& artifact,
                        const quant::QuantConfig& qcfg, const toy::CalibrationSet& calib,
                        const EvalConfig& cfg);

struct AblationRow {
  std::string signal;
  double fraction = 0.0;
  std::vector<std::pair<std::string, double>> module_mse;  // weight-space MSE
  double mean_mse = 0.0;
  double end_to_end_mse = 0.0;
};

/// Plain RTN plus per-module protection for every (signal, fraction) pair.
/// Rows follow signal-major input order.
std::vector<AblationRow> ablate_signals(const store::TensorMap& pre, const store::TensorMap& post,
                                        const toy::CalibrationSet& calib,
                                        const std::vector<signals::MappingConfig>& signal_cfgs,
                                        const std::vector<double>& fractions,
                                        const quant::QuantConfig& qcfg, const EvalConfig& cfg);

/// signal,fraction,module,mse,end_to_end_mse with one line per module plus a
/// `mean` line for each row.
std::string ablation_to_csv(const std::vector<AblationRow>& rows);

struct CurvePoint {
  std::uint64_t step = 0;
  std::optional<double> mean_loss;  // empty when the deltas are degenerate
};

struct Curve {
  std::vector<CurvePoint> points;
  std::optional<double> slope;  // least squares over the finite points
};

struct CurveConfig {
  signals::MappingConfig mapping;
  quant::QuantConfig quant;
  search::SearchConfig search;
};

/// Importance from (snapshot 0, snapshot t), then the full search on the
/// final checkpoint, for every t after the first snapshot.
Curve pseudo_ft_curve(const std::vector<std::pair<std::uint64_t, store::TensorMap>>& snapshots,
                      const store::TensorMap& final_ref, const toy::CalibrationSet& calib,
                      const CurveConfig& cfg);

/// step,mean_loss,slope with the slope repeated on every line.
std::string curve_to_csv(const Curve& curve);

std::optional<double> least_squares_slope(const std::vector<std::pair<double, double>>& points);

}  // namespace deltaquant::eval

// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltaquant/search.hpp"

#include <algorithm>
#include <cmath>

#include "deltaquant/error.hpp"
#include "deltaquant/format.hpp"
#include "deltaquant/parallel.hpp"

namespace deltaquant::search {

void SearchConfig::validate() const {
  if (grid_points < 2) fail(ErrorCode::kInvalidArgument, "grid_points must be >= 2");
  if (!std::isfinite(alpha_lo) || !std::isfinite(alpha_hi) || !(alpha_lo < alpha_hi)) {
    fail(ErrorCode::kInvalidArgument, "alpha_lo must be below alpha_hi");
  }
  if (max_calib_rows < 1) fail(ErrorCode::kInvalidArgument, "max_calib_rows must be >= 1");
}

std::vector<double> SearchConfig::grid() const {
  validate();
  std::vector<double> g(grid_points);
  const double span = alpha_hi - alpha_lo;
  for (std::size_t k = 0; k < grid_points; ++k) {
    g[k] = alpha_lo + static_cast<double>(k) * span / static_cast<double>(grid_points - 1);
  }
  g.back() = alpha_hi;
  return g;
}

double quant_loss(const Matrix& weight, const Matrix& calib_inputs, std::span<const float> scale,
                  const quant::QuantConfig& qcfg) {
  if (calib_inputs.rows() < 1) fail(ErrorCode::kInvalidArgument, "quant_loss needs >= 1 row");
  if (calib_inputs.cols() != weight.cols() || scale.size() != weight.cols()) {
    fail(ErrorCode::kShapeMismatch, "weight has " + std::to_string(weight.cols()) +
                                        " inputs, calibration " +
                                        std::to_string(calib_inputs.cols()) + ", scale " +
                                        std::to_string(scale.size()));
  }
  for (float s : scale) {
    if (!std::isfinite(s) || !(s > 0.0f)) {
      fail(ErrorCode::kInvalidArgument, "scale entries must be positive and finite");
    }
  }
  quant::QuantConfig plain = qcfg;
  plain.protect_fraction = 0.0;
  const Matrix approx = quant::dequantize(
      quant::quantize(weight, plain, scale, std::vector<bool>(weight.cols(), false)));

  const std::size_t out = weight.rows();
  const std::size_t in = weight.cols();
  std::vector<double> diff(out * in);
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = static_cast<double>(approx.values()[i]) - static_cast<double>(weight.values()[i]);
  }
  double total = 0.0;
  for (std::size_t n = 0; n < calib_inputs.rows(); ++n) {
    const auto x = calib_inputs.row(n);
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += diff[o * in + c] * static_cast<double>(x[c]);
      total += acc * acc;
    }
  }
  return total / static_cast<double>(calib_inputs.rows() * out);
}

std::vector<double> normalize_scale(std::span<const double> raw) {
  if (raw.empty()) return {};
  for (double v : raw) {
    if (!std::isfinite(v) || !(v > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "scale normalization needs positive finite entries");
    }
  }
  // Ratios to the maximum first: each is a single correctly rounded division,
  // so an exactly rescaled input produces bit-identical output.
  const double mx = *std::max_element(raw.begin(), raw.end());
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / mx;
  const double denom = std::sqrt(*std::min_element(out.begin(), out.end()));
  for (double& v : out) v /= denom;
  return out;
}

std::vector<float> scale_for_alpha(std::span<const float> importance, double alpha,
                                   bool normalize) {
  std::vector<double> base(importance.begin(), importance.end());
  if (normalize) base = normalize_scale(base);
  std::vector<float> s(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (!(base[i] > 0.0)) fail(ErrorCode::kInvalidArgument, "importance must be positive");
    s[i] = static_cast<float>(std::pow(base[i], alpha));
    if (!std::isfinite(s[i]) || !(s[i] > 0.0f)) {
      fail(ErrorCode::kNonFinite, "scale at alpha " + format_number(alpha) +
                                      " leaves the float range; enable normalization");
    }
  }
  return s;
}

SearchResult search_scale(const std::string& module, const Matrix& weight,
                          std::span<const float> importance, const Matrix& calib_inputs,
                          const SearchConfig& scfg, const quant::QuantConfig& qcfg) {
  const std::vector<double> alphas = scfg.grid();
  if (importance.size() != weight.cols()) {
    fail(ErrorCode::kShapeMismatch, "importance of '" + module + "' has length " +
                                        std::to_string(importance.size()) + ", expected " +
                                        std::to_string(weight.cols()));
  }
  std::vector<std::vector<float>> scales(alphas.size());
  std::vector<double> losses(alphas.size());
  parallel_for(alphas.size(), scfg.threads, [&](std::size_t k) {
    scales[k] = scale_for_alpha(importance, alphas[k], scfg.normalize_scale);
    losses[k] = quant_loss(weight, calib_inputs, scales[k], qcfg);
  });

  SearchResult r;
  r.module = module;
  const std::vector<float> ones(weight.cols(), 1.0f);
  r.rtn_loss = quant_loss(weight, calib_inputs, ones, qcfg);
  std::size_t best = 0;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    r.loss_curve.emplace_back(alphas[k], losses[k]);
    if (losses[k] < losses[best]) best = k;
  }
  r.alpha_star = alphas[best];
  r.best_loss = losses[best];
  r.scale = std::move(scales[best]);
  return r;
}

ModelQuantization quantize_model(const store::TensorMap& post,
                                 const std::map<std::string, signals::ImportanceVector>& importances,
                                 const toy::CalibrationSet& calib, const SearchConfig& scfg,
                                 const quant::QuantConfig& qcfg) {
  scfg.validate();
  qcfg.validate();
  ModelQuantization out;
  for (const auto& module : signals::weight_modules(post)) {
    const auto it = importances.find(module);
    if (it == importances.end()) {
      fail(ErrorCode::kMissingInput, "no importance vector for module '" + module + "'");
    }
    const Matrix weight = post.at(module + ".weight").to_matrix();
    const Matrix inputs = calib.inputs_for(module).head_rows(scfg.max_calib_rows);
    SearchResult r = search_scale(module, weight, it->second.scores, inputs, scfg, qcfg);
    const auto mask = quant::select_protected(it->second.scores, qcfg.protect_fraction);
    quant::QuantizedTensor q = quant::quantize(weight, qcfg, r.scale, mask);
    q.module = module;
    out.artifact.emplace(module, std::move(q));
    out.report.push_back(std::move(r));
  }
  if (out.report.empty()) fail(ErrorCode::kMissingTensor, "checkpoint has no weight tensors");
  return out;
}

std::string report_to_jsonl(const std::vector<SearchResult>& report, const SearchConfig& scfg) {
  std::string text;
  for (const auto& r : report) {
    text += "{\"module\":\"" + r.module + "\"";
    text += ",\"alpha_star\":" + format_number(r.alpha_star);
    text += ",\"rtn_loss\":" + format_number(r.rtn_loss);
    text += ",\"best_loss\":" + format_number(r.best_loss);
    text += ",\"loss_curve\":[";
    for (std::size_t k = 0; k < r.loss_curve.size(); ++k) {
      if (k) text += ",";
      text += "[" + format_number(r.loss_curve[k].first) + "," +
              format_number(r.loss_curve[k].second) + "]";
    }
    text += "],\"grid_points\":" + std::to_string(scfg.grid_points);
    text += ",\"alpha_grid\":\"endpoint-inclusive\"";
    text += std::string(",\"normalize_scale\":") + (scfg.normalize_scale ? "true" : "false");
    text += "}\n";
  }
  return text;
}

}  // namespace deltaquant::search

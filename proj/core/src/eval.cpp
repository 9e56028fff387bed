// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltaquant/eval.hpp"

#include <cmath>

#include "deltaquant/error.hpp"
#include "deltaquant/format.hpp"
#include "deltaquant/parallel.hpp"

namespace deltaquant::eval {

namespace {

std::vector<double> project(const Matrix& weight, const Matrix& inputs) {
  const std::size_t out = weight.rows();
  const std::size_t in = weight.cols();
  std::vector<double> y(inputs.rows() * out);
  for (std::size_t n = 0; n < inputs.rows(); ++n) {
    const auto x = inputs.row(n);
    for (std::size_t o = 0; o < out; ++o) {
      const auto w = weight.row(o);
      double acc = 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += static_cast<double>(x[c]) * static_cast<double>(w[c]);
      y[n * out + o] = acc;
    }
  }
  return y;
}

Matrix reconstruct(const Matrix& weight, const quant::QuantConfig& qcfg,
                   std::span<const float> scale, const std::vector<bool>& mask) {
  return quant::dequantize(quant::quantize(weight, qcfg, scale, mask));
}

}  // namespace

double output_mse(const Matrix& weight, const Matrix& approx, const Matrix& inputs) {
  if (weight.rows() != approx.rows() || weight.cols() != approx.cols() ||
      inputs.cols() != weight.cols()) {
    fail(ErrorCode::kShapeMismatch, "output_mse operands disagree in shape");
  }
  if (inputs.rows() == 0) fail(ErrorCode::kInvalidArgument, "output_mse needs >= 1 input row");
  const auto y = project(weight, inputs);
  const auto y_hat = project(approx, inputs);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y_hat[i] - y[i];
    total += d * d;
  }
  return total / static_cast<double>(y.size());
}

double weight_mse(const Matrix& weight, const Matrix& approx) {
  if (weight.rows() != approx.rows() || weight.cols() != approx.cols()) {
    fail(ErrorCode::kShapeMismatch, "weight_mse operands disagree in shape");
  }
  if (weight.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    const double d = static_cast<double>(approx.values()[i]) - static_cast<double>(weight.values()[i]);
    total += d * d;
  }
  return total / static_cast<double>(weight.size());
}

toy::ToyModel apply_artifact(const toy::ToyModel& model, const quant::Artifact& artifact) {
  toy::ToyModel out = model;
  for (auto& layer : out.layers) {
    const auto it = artifact.find(layer.name);
    if (it == artifact.end()) {
      fail(ErrorCode::kMissingTensor, "artifact has no entry for module '" + layer.name + "'");
    }
    Matrix w = quant::dequantize(it->second);
    if (w.rows() != layer.weight.rows() || w.cols() != layer.weight.cols()) {
      fail(ErrorCode::kShapeMismatch, "artifact shape of '" + layer.name + "' differs from the model");
    }
    layer.weight = std::move(w);
  }
  return out;
}

EndToEnd end_to_end(const toy::ToyModel& model, const quant::Artifact& artifact,
                    const EvalConfig& cfg) {
  if (cfg.eval_rows == 0) fail(ErrorCode::kInvalidArgument, "eval_rows must be >= 1");
  const Matrix x = toy::random_inputs(cfg.eval_rows, model.input_dim(), cfg.eval_seed);
  const Matrix y = toy::forward(model, x).outputs;
  const Matrix y_hat = toy::forward(apply_artifact(model, artifact), x).outputs;
  double err = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y_hat.values()[i]) - static_cast<double>(y.values()[i]);
    err += d * d;
    ref += static_cast<double>(y.values()[i]) * static_cast<double>(y.values()[i]);
  }
  EndToEnd e;
  e.output_mse = err / static_cast<double>(y.size());
  e.relative_frobenius = ref > 0.0 ? std::sqrt(err / ref) : std::sqrt(err);
  return e;
}

EvalReport layer_report(const store::TensorMap& post, const quant::Artifact& artifact,
                        const quant::QuantConfig& qcfg, const toy::CalibrationSet& calib,
                        const EvalConfig& cfg) {
  EvalReport report;
  report.quant = qcfg;
  report.config = cfg;
  const auto modules = signals::weight_modules(post);
  std::vector<ModuleErrors> errors(modules.size());
  for (const auto& m : modules) {
    if (!artifact.count(m)) fail(ErrorCode::kMissingTensor, "artifact has no entry for '" + m + "'");
    (void)calib.inputs_for(m);
  }
  parallel_for(modules.size(), cfg.threads, [&](std::size_t i) {
    const std::string& m = modules[i];
    const quant::QuantizedTensor& q = artifact.at(m);
    const Matrix weight = post.at(m + ".weight").to_matrix();
    const Matrix inputs = calib.inputs_for(m).head_rows(cfg.max_calib_rows);
    quant::QuantConfig local = qcfg;
    local.bits = q.bits;
    local.group_size = q.group_size;
    const std::vector<float> ones(weight.cols(), 1.0f);
    errors[i].rtn_mse = output_mse(weight, reconstruct(weight, local, ones, q.protected_mask), inputs);
    errors[i].searched_mse =
        output_mse(weight, reconstruct(weight, local, q.channel_scale, q.protected_mask), inputs);
    errors[i].protected_mse = output_mse(weight, quant::dequantize(q), inputs);
  });
  for (std::size_t i = 0; i < modules.size(); ++i) report.per_module[modules[i]] = errors[i];
  report.end_to_end = end_to_end(toy::from_checkpoint(post), artifact, cfg);
  return report;
}

std::string EvalReport::to_json() const {
  std::string text = "{\"per_module\":{";
  bool first = true;
  for (const auto& [m, e] : per_module) {
    if (!first) text += ",";
    first = false;
    text += "\"" + m + "\":{\"rtn_mse\":" + format_number(e.rtn_mse) +
            ",\"searched_mse\":" + format_number(e.searched_mse) +
            ",\"protected_mse\":" + format_number(e.protected_mse) + "}";
  }
  text += "},\"end_to_end\":{\"output_mse_fp32_vs_quant\":" + format_number(end_to_end.output_mse) +
          ",\"relative_frobenius\":" + format_number(end_to_end.relative_frobenius) + "}";
  text += ",\"config\":{\"bits\":" + std::to_string(quant.bits) +
          ",\"group_size\":" + std::to_string(quant.group_size) +
          ",\"protect_fraction\":" + format_number(quant.protect_fraction) +
          ",\"eval_seed\":" + std::to_string(config.eval_seed) +
          ",\"eval_rows\":" + std::to_string(config.eval_rows) +
          ",\"max_calib_rows\":" + std::to_string(config.max_calib_rows) + "}}\n";
  return text;
}

std::vector<AblationRow> ablate_signals(const store::TensorMap& pre, const store::TensorMap& post,
                                        const toy::CalibrationSet& calib,
                                        const std::vector<signals::MappingConfig>& signal_cfgs,
                                        const std::vector<double>& fractions,
                                        const quant::QuantConfig& qcfg, const EvalConfig& cfg) {
  if (signal_cfgs.empty()) fail(ErrorCode::kInvalidArgument, "ablation needs at least one signal");
  if (fractions.empty()) fail(ErrorCode::kInvalidArgument, "ablation needs at least one fraction");
  qcfg.validate();
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) {
      fail(ErrorCode::kInvalidArgument, "protect fraction " + format_number(f) + " outside [0, 1]");
    }
  }
  std::vector<signals::ImportanceSet> sets(signal_cfgs.size());
  parallel_for(signal_cfgs.size(), cfg.threads, [&](std::size_t i) {
    sets[i] = signals::importance_all(pre, post, signal_cfgs[i], &calib);
  });

  const auto modules = signals::weight_modules(post);
  std::vector<Matrix> weights;
  for (const auto& m : modules) weights.push_back(post.at(m + ".weight").to_matrix());
  const toy::ToyModel model = toy::from_checkpoint(post);

  std::vector<AblationRow> rows(signal_cfgs.size() * fractions.size());
  parallel_for(rows.size(), cfg.threads, [&](std::size_t idx) {
    const std::size_t si = idx / fractions.size();
    const double fraction = fractions[idx % fractions.size()];
    AblationRow& row = rows[idx];
    row.signal = std::string(signals::to_string(signal_cfgs[si].signal));
    row.fraction = fraction;
    quant::Artifact artifact;
    double sum = 0.0;
    for (std::size_t m = 0; m < modules.size(); ++m) {
      const auto& scores = sets[si].modules.at(modules[m]).scores;
      const auto mask = quant::select_protected(scores, fraction);
      const std::vector<float> ones(weights[m].cols(), 1.0f);
      quant::QuantizedTensor q = quant::quantize(weights[m], qcfg, ones, mask);
      q.module = modules[m];
      const double mse = weight_mse(weights[m], quant::dequantize(q));
      row.module_mse.emplace_back(modules[m], mse);
      sum += mse;
      artifact.emplace(modules[m], std::move(q));
    }
    row.mean_mse = sum / static_cast<double>(modules.size());
    row.end_to_end_mse = end_to_end(model, artifact, cfg).output_mse;
  });
  return rows;
}

std::string ablation_to_csv(const std::vector<AblationRow>& rows) {
  std::string text = "signal,fraction,module,mse,end_to_end_mse\n";
  for (const auto& r : rows) {
    const std::string prefix = r.signal + "," + format_number(r.fraction) + ",";
    const std::string suffix = "," + format_number(r.end_to_end_mse) + "\n";
    for (const auto& [m, mse] : r.module_mse) text += prefix + m + "," + format_number(mse) + suffix;
    text += prefix + "mean," + format_number(r.mean_mse) + suffix;
  }
  return text;
}

std::optional<double> least_squares_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) return std::nullopt;
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(points.size());
  my /= static_cast<double>(points.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (const auto& [x, y] : points) {
    sxy += (x - mx) * (y - my);
    sxx += (x - mx) * (x - mx);
  }
  if (!(sxx > 0.0)) return std::nullopt;
  return sxy / sxx;
}

Curve pseudo_ft_curve(const std::vector<std::pair<std::uint64_t, store::TensorMap>>& snapshots,
                      const store::TensorMap& final_ref, const toy::CalibrationSet& calib,
                      const CurveConfig& cfg) {
  if (snapshots.size() < 2) fail(ErrorCode::kInvalidArgument, "curve needs at least two snapshots");
  if (snapshots.front().first != 0) {
    fail(ErrorCode::kInvalidArgument, "the first snapshot must be step 0");
  }
  cfg.mapping.validate();
  cfg.quant.validate();
  cfg.search.validate();
  Curve curve;
  std::vector<std::pair<double, double>> valid;
  for (std::size_t i = 1; i < snapshots.size(); ++i) {
    CurvePoint point{snapshots[i].first, std::nullopt};
    try {
      const auto set = signals::importance_all(snapshots.front().second, snapshots[i].second,
                                               cfg.mapping, &calib);
      const auto result = search::quantize_model(final_ref, set.modules, calib, cfg.search, cfg.quant);
      double sum = 0.0;
      for (const auto& r : result.report) sum += r.best_loss;
      point.mean_loss = sum / static_cast<double>(result.report.size());
      valid.emplace_back(static_cast<double>(point.step), *point.mean_loss);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateDeltas) throw;
    }
    curve.points.push_back(point);
  }
  curve.slope = least_squares_slope(valid);
  return curve;
}

std::string curve_to_csv(const Curve& curve) {
  const std::string slope = curve.slope ? format_number(*curve.slope) : "nan";
  std::string text = "step,mean_loss,slope\n";
  for (const auto& p : curve.points) {
    text += std::to_string(p.step) + "," + (p.mean_loss ? format_number(*p.mean_loss) : "degenerate") +
            "," + slope + "\n";
  }
  return text;
}

}  // namespace deltaquant::eval

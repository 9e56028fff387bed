// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltaquant/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "deltaquant/error.hpp"
#include "deltaquant/format.hpp"
#include "deltaquant/rng.hpp"

namespace deltaquant::toy {

namespace {

constexpr std::uint64_t kTeacherSalt = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kProbeSalt = 0xD1B54A32D192ED03ULL;
constexpr std::size_t kProbeRows = 256;
constexpr double kFiniteDiffStep = 1e-3;
constexpr double kAbsoluteFloor = 1e-6;

/// Double-precision activations of one forward pass.
struct Trace {
  std::vector<std::vector<double>> inputs;  // per layer, [n * in]
  std::vector<std::vector<double>> pre;     // per layer, [n * out]
  std::vector<double> output;               // [n * out_last]
};

Trace trace_forward(const ToyModel& model, const Matrix& x) {
  const std::size_t n = x.rows();
  Trace t;
  std::vector<double> h(x.values().begin(), x.values().end());
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    const std::size_t in = layer.weight.cols();
    const std::size_t out = layer.weight.rows();
    std::vector<double> z(n * out);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = layer.bias[o];
        const auto w = layer.weight.row(o);
        for (std::size_t c = 0; c < in; ++c) acc += static_cast<double>(w[c]) * h[s * in + c];
        z[s * out + o] = acc;
      }
    }
    t.inputs.push_back(h);
    t.pre.push_back(z);
    if (k + 1 < model.layers.size()) {
      for (auto& v : z) v = v > 0.0 ? v : 0.0;
    }
    h = std::move(z);
  }
  t.output = std::move(h);
  return t;
}

double trace_loss(const Trace& t, const Matrix& targets) {
  double acc = 0.0;
  const auto y = targets.values();
  for (std::size_t i = 0; i < t.output.size(); ++i) {
    const double d = t.output[i] - y[i];
    acc += d * d;
  }
  return acc / static_cast<double>(t.output.size());
}

void check_batch(const ToyModel& model, const Matrix& inputs) {
  if (model.layers.empty()) fail(ErrorCode::kInvalidArgument, "model has no layers");
  if (inputs.cols() != model.input_dim()) {
    fail(ErrorCode::kShapeMismatch, "inputs have " + std::to_string(inputs.cols()) +
                                        " columns, model expects " +
                                        std::to_string(model.input_dim()));
  }
}

void check_targets(const ToyModel& model, const Matrix& inputs, const Matrix& targets) {
  check_batch(model, inputs);
  if (targets.rows() != inputs.rows() || targets.cols() != model.output_dim()) {
    fail(ErrorCode::kShapeMismatch, "targets must be [n, output_dim]");
  }
}

std::string dims_text(const std::vector<std::size_t>& dims) {
  std::vector<std::string> parts;
  for (auto d : dims) parts.push_back(std::to_string(d));
  return join(parts, ",");
}

/// Rectifier activation pattern of every hidden unit on every sample.
std::vector<bool> kink_pattern(const ToyModel& model, const Matrix& x) {
  const Trace t = trace_forward(model, x);
  std::vector<bool> pattern;
  for (std::size_t k = 0; k + 1 < t.pre.size(); ++k) {
    for (double z : t.pre[k]) pattern.push_back(z > 0.0);
  }
  return pattern;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) fail(ErrorCode::kInvalidArgument, "steps must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorCode::kInvalidArgument, "learning_rate must be positive");
  }
  if (batch_size < 1) fail(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  if (snapshot_every < 1) fail(ErrorCode::kInvalidArgument, "snapshot_every must be >= 1");
}

std::size_t CalibrationSet::samples() const {
  return inputs.empty() ? 0 : inputs.begin()->second.rows();
}

const Matrix& CalibrationSet::inputs_for(const std::string& module) const {
  auto it = inputs.find(module);
  if (it == inputs.end()) fail(ErrorCode::kMissingInput, "no calibration inputs for '" + module + "'");
  return it->second;
}

const ChannelStats& CalibrationSet::stats_for(const std::string& module) const {
  auto it = stats.find(module);
  if (it == stats.end()) fail(ErrorCode::kMissingInput, "no calibration stats for '" + module + "'");
  return it->second;
}

ChannelStats channel_stats(const Matrix& inputs) {
  const std::size_t n = inputs.rows();
  const std::size_t in = inputs.cols();
  std::vector<double> abs_sum(in, 0.0), sq_sum(in, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const auto row = inputs.row(s);
    for (std::size_t c = 0; c < in; ++c) {
      const double v = row[c];
      abs_sum[c] += std::fabs(v);
      sq_sum[c] += v * v;
    }
  }
  ChannelStats stats;
  stats.mean_abs.resize(in);
  stats.mean_square.resize(in);
  const double denom = n ? static_cast<double>(n) : 1.0;
  for (std::size_t c = 0; c < in; ++c) {
    stats.mean_abs[c] = static_cast<float>(abs_sum[c] / denom);
    stats.mean_square[c] = static_cast<float>(sq_sum[c] / denom);
  }
  return stats;
}

std::string module_name(std::size_t layer_index) { return "layer" + std::to_string(layer_index); }

ToyModel init_model(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  if (dims.size() < 2) fail(ErrorCode::kInvalidArgument, "dims needs at least 2 entries");
  if (std::any_of(dims.begin(), dims.end(), [](std::size_t d) { return d == 0; })) {
    fail(ErrorCode::kInvalidArgument, "every dimension must be >= 1");
  }
  ToyModel model;
  model.dims = dims;
  model.seed = seed;
  Rng rng(seed);
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    const std::size_t in = dims[k];
    const std::size_t out = dims[k + 1];
    const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
    Linear layer{module_name(k), Matrix(out, in), std::vector<float>(out, 0.0f)};
    for (auto& w : layer.weight.values()) w = static_cast<float>(rng.normal() * stddev);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

ForwardResult forward(const ToyModel& model, const Matrix& inputs) {
  check_batch(model, inputs);
  const std::size_t n = inputs.rows();
  ForwardResult result;
  Matrix h = inputs;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    const std::size_t in = layer.weight.cols();
    const std::size_t out = layer.weight.rows();
    result.capture.stats[layer.name] = channel_stats(h);
    Matrix z(n, out);
    for (std::size_t s = 0; s < n; ++s) {
      const auto x = h.row(s);
      for (std::size_t o = 0; o < out; ++o) {
        double acc = layer.bias[o];
        const auto w = layer.weight.row(o);
        for (std::size_t c = 0; c < in; ++c) acc += static_cast<double>(w[c]) * x[c];
        float v = static_cast<float>(acc);
        if (k + 1 < model.layers.size() && !(v > 0.0f)) v = 0.0f;
        z(s, o) = v;
      }
    }
    result.capture.inputs[layer.name] = std::move(h);
    h = std::move(z);
  }
  result.outputs = std::move(h);
  return result;
}

Matrix random_inputs(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

Matrix teacher_targets(const ToyModel& student, const Matrix& inputs, std::uint64_t data_seed) {
  const ToyModel teacher = init_model(student.dims, data_seed ^ kTeacherSalt);
  return forward(teacher, inputs).outputs;
}

double mse_loss(const ToyModel& model, const Matrix& inputs, const Matrix& targets) {
  check_targets(model, inputs, targets);
  return trace_loss(trace_forward(model, inputs), targets);
}

Gradients compute_gradients(const ToyModel& model, const Matrix& inputs, const Matrix& targets) {
  check_targets(model, inputs, targets);
  const Trace t = trace_forward(model, inputs);
  const std::size_t n = inputs.rows();
  const std::size_t layers = model.layers.size();

  Gradients g;
  g.weight.resize(layers);
  g.bias.resize(layers);

  // dL/dy for L = mean over n*out of squared error.
  const auto y = targets.values();
  std::vector<double> dz(t.output.size());
  const double scale = 2.0 / static_cast<double>(t.output.size());
  for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = scale * (t.output[i] - y[i]);

  for (std::size_t k = layers; k-- > 0;) {
    const auto& layer = model.layers[k];
    const std::size_t in = layer.weight.cols();
    const std::size_t out = layer.weight.rows();
    const auto& h = t.inputs[k];
    auto& gw = g.weight[k];
    auto& gb = g.bias[k];
    gw.assign(out * in, 0.0);
    gb.assign(out, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dz[s * out + o];
        gb[o] += d;
        for (std::size_t c = 0; c < in; ++c) gw[o * in + c] += d * h[s * in + c];
      }
    }
    if (k == 0) break;
    std::vector<double> dh(n * in, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dz[s * out + o];
        const auto w = layer.weight.row(o);
        for (std::size_t c = 0; c < in; ++c) dh[s * in + c] += d * w[c];
      }
    }
    const auto& prev_pre = t.pre[k - 1];
    for (std::size_t i = 0; i < dh.size(); ++i) {
      if (!(prev_pre[i] > 0.0)) dh[i] = 0.0;
    }
    dz = std::move(dh);
  }
  return g;
}

TrainResult train(const ToyModel& model, const TrainConfig& cfg) {
  cfg.validate();
  TrainResult result;
  ToyModel student = model;

  const Matrix probe = random_inputs(kProbeRows, student.input_dim(), cfg.data_seed ^ kProbeSalt);
  const Matrix probe_targets = teacher_targets(student, probe, cfg.data_seed);
  result.initial_loss = mse_loss(student, probe, probe_targets);

  const ToyModel teacher = init_model(student.dims, cfg.data_seed ^ kTeacherSalt);
  Rng data(cfg.data_seed);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (step % cfg.snapshot_every == 0) {
      result.snapshots.push_back({step, to_checkpoint(student, step)});
    }
    Matrix batch(cfg.batch_size, student.input_dim());
    for (auto& v : batch.values()) v = static_cast<float>(data.normal());
    const Matrix targets = forward(teacher, batch).outputs;

    const double loss = mse_loss(student, batch, targets);
    if (!std::isfinite(loss)) {
      fail(ErrorCode::kDivergence, "non-finite training loss at step " + std::to_string(step));
    }
    result.loss_curve.push_back(loss);

    const Gradients g = compute_gradients(student, batch, targets);
    for (std::size_t k = 0; k < student.layers.size(); ++k) {
      auto& layer = student.layers[k];
      auto w = layer.weight.values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = static_cast<float>(static_cast<double>(w[i]) - cfg.learning_rate * g.weight[k][i]);
      }
      for (std::size_t o = 0; o < layer.bias.size(); ++o) {
        layer.bias[o] = static_cast<float>(static_cast<double>(layer.bias[o]) -
                                           cfg.learning_rate * g.bias[k][o]);
      }
    }
  }

  result.final_loss = mse_loss(student, probe, probe_targets);
  if (!std::isfinite(result.final_loss)) {
    fail(ErrorCode::kDivergence, "non-finite training loss at step " + std::to_string(cfg.steps));
  }
  result.snapshots.push_back({cfg.steps, to_checkpoint(student, cfg.steps)});
  result.final_model = std::move(student);
  return result;
}

std::string GradCheckReport::to_text() const {
  std::ostringstream os;
  os << "max_relative_error=" << format_number(max_relative_error) << " checked=" << checked
     << " skipped_kinks=" << skipped_kinks << " worst=" << worst_parameter
     << " passed=" << (passed ? "true" : "false");
  return os.str();
}

GradCheckReport check_gradients(const ToyModel& model, const Matrix& inputs,
                                const Matrix& targets, const Gradients& analytic,
                                double tolerance) {
  check_targets(model, inputs, targets);
  GradCheckReport report;
  ToyModel probe = model;

  auto check_one = [&](float& param, double grad, const std::string& label) {
    const float original = param;
    const float plus = static_cast<float>(original + kFiniteDiffStep);
    const float minus = static_cast<float>(original - kFiniteDiffStep);
    param = plus;
    const double loss_plus = mse_loss(probe, inputs, targets);
    const auto pattern_plus = kink_pattern(probe, inputs);
    param = minus;
    const double loss_minus = mse_loss(probe, inputs, targets);
    const auto pattern_minus = kink_pattern(probe, inputs);
    param = original;
    if (pattern_plus != pattern_minus) {
      ++report.skipped_kinks;
      return;
    }
    const double step = static_cast<double>(plus) - static_cast<double>(minus);
    const double numeric = (loss_plus - loss_minus) / step;
    const double scale = std::max(std::fabs(grad), std::fabs(numeric));
    const double diff = std::fabs(grad - numeric);
    double err = 0.0;
    if (scale < kAbsoluteFloor) {
      err = diff <= kAbsoluteFloor ? 0.0 : diff / kAbsoluteFloor;
    } else {
      err = diff / scale;
    }
    ++report.checked;
    if (report.worst_parameter.empty() || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_parameter = label;
    }
  };

  for (std::size_t k = 0; k < probe.layers.size(); ++k) {
    auto& layer = probe.layers[k];
    auto w = layer.weight.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      check_one(w[i], analytic.weight.at(k).at(i),
                layer.name + ".weight[" + std::to_string(i) + "]");
    }
    for (std::size_t o = 0; o < layer.bias.size(); ++o) {
      check_one(layer.bias[o], analytic.bias.at(k).at(o),
                layer.name + ".bias[" + std::to_string(o) + "]");
    }
  }
  report.passed = report.checked > 0 && report.max_relative_error <= tolerance;
  return report;
}

GradCheckReport finite_diff_check(const ToyModel& model, const Matrix& inputs,
                                  const Matrix& targets, double tolerance) {
  return check_gradients(model, inputs, targets, compute_gradients(model, inputs, targets),
                         tolerance);
}

store::TensorMap to_checkpoint(const ToyModel& model, std::size_t step) {
  store::TensorMap map;
  for (const auto& layer : model.layers) {
    map.put(layer.name + ".weight", store::Tensor::from_matrix(layer.weight));
    map.put(layer.name + ".bias", store::Tensor::from_vector(layer.bias));
  }
  map.meta["kind"] = "checkpoint";
  map.meta["dims"] = dims_text(model.dims);
  map.meta["seed"] = std::to_string(model.seed);
  map.meta["step"] = std::to_string(step);
  return map;
}

ToyModel from_checkpoint(const store::TensorMap& checkpoint) {
  ToyModel model;
  if (checkpoint.meta.count("seed")) model.seed = parse_uint(checkpoint.meta.at("seed"));
  for (std::size_t k = 0;; ++k) {
    const std::string name = module_name(k);
    if (!checkpoint.contains(name + ".weight")) break;
    const auto& wt = checkpoint.at(name + ".weight");
    if (wt.rank() != 2) fail(ErrorCode::kInvalidTensor, "'" + name + ".weight' must be rank 2");
    Linear layer{name, wt.to_matrix(), {}};
    if (checkpoint.contains(name + ".bias")) {
      layer.bias = checkpoint.at(name + ".bias").to_vector();
    } else {
      layer.bias.assign(layer.weight.rows(), 0.0f);
    }
    if (layer.bias.size() != layer.weight.rows()) {
      fail(ErrorCode::kShapeMismatch, "'" + name + ".bias' does not match the weight rows");
    }
    if (k == 0) model.dims.push_back(layer.weight.cols());
    if (layer.weight.cols() != model.dims.back()) {
      fail(ErrorCode::kShapeMismatch, "'" + name + ".weight' does not chain with the previous layer");
    }
    model.dims.push_back(layer.weight.rows());
    model.layers.push_back(std::move(layer));
  }
  if (model.layers.empty()) fail(ErrorCode::kMissingTensor, "'layer0.weight'");
  return model;
}

store::TensorMap calibration_to_container(const CalibrationSet& calib) {
  store::TensorMap map;
  for (const auto& [module, x] : calib.inputs) {
    map.put(module + ".calib_inputs", store::Tensor::from_matrix(x));
  }
  for (const auto& [module, s] : calib.stats) {
    map.put(module + ".mean_abs", store::Tensor::from_vector(s.mean_abs));
    map.put(module + ".mean_square", store::Tensor::from_vector(s.mean_square));
  }
  map.meta["kind"] = "calibration";
  map.meta["samples"] = std::to_string(calib.samples());
  return map;
}

CalibrationSet calibration_from_container(const store::TensorMap& map) {
  static constexpr std::string_view kSuffix = ".calib_inputs";
  CalibrationSet calib;
  for (const auto& [name, t] : map.tensors) {
    if (name.size() <= kSuffix.size() || !name.ends_with(kSuffix)) continue;
    const std::string module = name.substr(0, name.size() - kSuffix.size());
    if (t.rank() != 2) fail(ErrorCode::kInvalidTensor, "'" + name + "' must be rank 2");
    Matrix x = t.to_matrix();
    if (x.rows() < 1) fail(ErrorCode::kInvalidTensor, "'" + name + "' has no samples");
    if (!calib.inputs.empty() && calib.samples() != x.rows()) {
      fail(ErrorCode::kShapeMismatch, "calibration modules disagree on sample count");
    }
    ChannelStats stats;
    if (map.contains(module + ".mean_abs") && map.contains(module + ".mean_square")) {
      stats.mean_abs = map.at(module + ".mean_abs").to_vector();
      stats.mean_square = map.at(module + ".mean_square").to_vector();
      if (stats.mean_abs.size() != x.cols() || stats.mean_square.size() != x.cols()) {
        fail(ErrorCode::kShapeMismatch, "channel stats of '" + module + "' have the wrong length");
      }
    } else {
      stats = channel_stats(x);
    }
    calib.stats[module] = std::move(stats);
    calib.inputs[module] = std::move(x);
  }
  return calib;
}

}  // namespace deltaquant::toy

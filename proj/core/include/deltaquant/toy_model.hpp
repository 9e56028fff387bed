// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deltaquant/matrix.hpp"
#include "deltaquant/tensor_store.hpp"

namespace deltaquant::toy {

struct Linear {
  std::string name;
  Matrix weight;  // [out, in]
  std::vector<float> bias;
};

/// Multilayer perceptron: linear layers with a rectifier between them and a
/// linear output.
struct ToyModel {
  std::vector<Linear> layers;
  std::vector<std::size_t> dims;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return dims.front(); }
  std::size_t output_dim() const { return dims.back(); }
};

struct TrainConfig {
  std::size_t steps = 200;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t data_seed = 1;
  std::size_t snapshot_every = 100;

  void validate() const;
};

struct ChannelStats {
  std::vector<float> mean_abs;
  std::vector<float> mean_square;
};

/// Inputs seen by each linear module during a forward sweep.
struct CalibrationSet {
  std::map<std::string, Matrix> inputs;  // module -> [n_samples, in_features]
  std::map<std::string, ChannelStats> stats;

  std::size_t samples() const;
  const Matrix& inputs_for(const std::string& module) const;
  const ChannelStats& stats_for(const std::string& module) const;
};

ChannelStats channel_stats(const Matrix& inputs);

std::string module_name(std::size_t layer_index);

ToyModel init_model(const std::vector<std::size_t>& dims, std::uint64_t seed);

struct ForwardResult {
  Matrix outputs;
  CalibrationSet capture;
};

ForwardResult forward(const ToyModel& model, const Matrix& inputs);

/// Standard-normal batch of `rows` samples.
Matrix random_inputs(std::size_t rows, std::size_t cols, std::uint64_t seed);

/// Regression targets from the fixed teacher network seeded by data_seed.
Matrix teacher_targets(const ToyModel& student, const Matrix& inputs, std::uint64_t data_seed);

struct Snapshot {
  std::size_t step = 0;
  store::TensorMap checkpoint;
};

struct TrainResult {
  ToyModel final_model;
  std::vector<Snapshot> snapshots;
  std::vector<double> loss_curve;  // batch loss before each step
  double initial_loss = 0.0;       // on a fixed probe batch
  double final_loss = 0.0;
};

/// Full-batch-per-step gradient descent on mean squared error against the
/// teacher. Snapshots are taken at step 0, every snapshot_every steps, and at
/// the final step.
TrainResult train(const ToyModel& model, const TrainConfig& cfg);

struct Gradients {
  std::vector<std::vector<double>> weight;  // per layer, row-major like the weight
  std::vector<std::vector<double>> bias;
};

double mse_loss(const ToyModel& model, const Matrix& inputs, const Matrix& targets);
Gradients compute_gradients(const ToyModel& model, const Matrix& inputs, const Matrix& targets);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst_parameter;
  bool passed = false;

  std::string to_text() const;
};

/// Compares `analytic` against central differences (step 1e-3) on every
/// parameter of a small model. Parameters whose stencil crosses a rectifier
/// kink are skipped and counted. Pairs with both magnitudes below 1e-6 are
/// compared absolutely against 1e-6.
GradCheckReport check_gradients(const ToyModel& model, const Matrix& inputs,
                                const Matrix& targets, const Gradients& analytic,
                                double tolerance);
GradCheckReport finite_diff_check(const ToyModel& model, const Matrix& inputs,
                                  const Matrix& targets, double tolerance);

store::TensorMap to_checkpoint(const ToyModel& model, std::size_t step);
ToyModel from_checkpoint(const store::TensorMap& checkpoint);

store::TensorMap calibration_to_container(const CalibrationSet& calib);
CalibrationSet calibration_from_container(const store::TensorMap& map);

}  // namespace deltaquant::toy

// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "deltaquant/error.hpp"
#include "deltaquant/eval.hpp"
#include "oracles.hpp"

namespace dq = deltaquant;
namespace oracle = deltaquant::oracle;
namespace ev = deltaquant::eval;

namespace {

struct Run {
  dq::toy::TrainResult train;
  dq::store::TensorMap pre;
  dq::store::TensorMap post;
  dq::toy::CalibrationSet calib;
};

const Run& trained() {
  static const Run run = [] {
    Run r;
    dq::toy::TrainConfig cfg;
    cfg.steps = 300;
    r.train = dq::toy::train(dq::toy::init_model({8, 16, 8}, 0), cfg);
    r.pre = r.train.snapshots.front().checkpoint;
    r.post = dq::toy::to_checkpoint(r.train.final_model, cfg.steps);
    r.calib = dq::toy::forward(r.train.final_model, dq::toy::random_inputs(64, 8, 42)).capture;
    return r;
  }();
  return run;
}

dq::search::ModelQuantization quantize(unsigned bits, double protect) {
  const auto& r = trained();
  const auto imp = dq::signals::importance_all(r.pre, r.post, {}, &r.calib);
  dq::quant::QuantConfig q;
  q.bits = bits;
  q.protect_fraction = protect;
  return dq::search::quantize_model(r.post, imp.modules, r.calib, {}, q);
}

}  // namespace

TEST(Eval, FullProtectionGivesZeroError) {
  const auto& r = trained();
  dq::quant::QuantConfig q;
  q.protect_fraction = 1.0;
  const auto report = ev::layer_report(r.post, quantize(3, 1.0).artifact, q, r.calib, {});
  for (const auto& [m, e] : report.per_module) {
    EXPECT_LE(e.rtn_mse, 1e-10) << m;
    EXPECT_LE(e.searched_mse, 1e-10) << m;
    EXPECT_LE(e.protected_mse, 1e-10) << m;
  }
  EXPECT_LE(report.end_to_end.output_mse, 1e-10);
}

TEST(Eval, SearchedNeverWorseAndCrossCheck) {
  const auto& r = trained();
  const auto result = quantize(3, 0.0);
  const auto report = ev::layer_report(r.post, result.artifact, {}, r.calib, {});
  for (const auto& s : result.report) {
    const auto& e = report.per_module.at(s.module);
    EXPECT_LE(e.searched_mse, e.rtn_mse);
    EXPECT_NEAR(e.rtn_mse, s.rtn_loss, 1e-9);
    EXPECT_NEAR(e.searched_mse, s.best_loss, 1e-9);
    EXPECT_EQ(e.searched_mse, e.protected_mse);
  }
  EXPECT_GT(report.end_to_end.output_mse, 0.0);
  EXPECT_GT(report.end_to_end.relative_frobenius, 0.0);
  EXPECT_LT(report.end_to_end.relative_frobenius, 1.0);
}

TEST(Eval, FourBitsBeatThree) {
  const auto& r = trained();
  dq::quant::QuantConfig q3;
  dq::quant::QuantConfig q4;
  q4.bits = 4;
  const auto a = ev::layer_report(r.post, quantize(3, 0.0).artifact, q3, r.calib, {});
  const auto b = ev::layer_report(r.post, quantize(4, 0.0).artifact, q4, r.calib, {});
  for (const auto& [m, e] : a.per_module) {
    EXPECT_LE(b.per_module.at(m).rtn_mse, e.rtn_mse) << m;
    EXPECT_LE(b.per_module.at(m).searched_mse, e.searched_mse) << m;
  }
}

TEST(Eval, AblationRowsAndMonotonicity) {
  const auto& r = trained();
  std::vector<dq::signals::MappingConfig> signals;
  for (auto s : {dq::signals::Signal::kMagnitude, dq::signals::Signal::kBothEndsZero,
                 dq::signals::Signal::kActivationSq}) {
    dq::signals::MappingConfig m;
    m.signal = s;
    signals.push_back(m);
  }
  const std::vector<double> fractions{0.0, 0.05, 0.3, 1.0};
  const auto rows = ev::ablate_signals(r.pre, r.post, r.calib, signals, fractions, {}, {});
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[0].signal, "magnitude");
  EXPECT_EQ(rows[4].signal, "both-ends-zero");
  EXPECT_EQ(rows[0].module_mse, rows[4].module_mse);
  EXPECT_EQ(rows[0].module_mse, rows[8].module_mse);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t f = 1; f < 4; ++f) {
      const auto& prev = rows[s * 4 + f - 1];
      const auto& cur = rows[s * 4 + f];
      for (std::size_t m = 0; m < cur.module_mse.size(); ++m) {
        EXPECT_LE(cur.module_mse[m].second, prev.module_mse[m].second);
      }
    }
    for (const auto& [m, mse] : rows[s * 4 + 3].module_mse) EXPECT_EQ(mse, 0.0);
    EXPECT_EQ(rows[s * 4 + 3].end_to_end_mse, 0.0);
  }
  const auto csv = ev::ablation_to_csv(rows);
  EXPECT_EQ(csv.rfind("signal,fraction,module,mse,end_to_end_mse\nmagnitude,0,layer0,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 12 * 3);
  EXPECT_THROW(ev::ablate_signals(r.pre, r.post, r.calib, {}, fractions, {}, {}), dq::Error);
}

TEST(Eval, AblationThreadsAgree) {
  const auto& r = trained();
  std::vector<dq::signals::MappingConfig> signals(2);
  signals[1].signal = dq::signals::Signal::kMid;
  ev::EvalConfig four;
  four.threads = 4;
  EXPECT_EQ(ev::ablation_to_csv(ev::ablate_signals(r.pre, r.post, r.calib, signals, {0.1, 0.5}, {}, {})),
            ev::ablation_to_csv(ev::ablate_signals(r.pre, r.post, r.calib, signals, {0.1, 0.5}, {}, four)));
}

TEST(Eval, CurveMarksDegenerateSteps) {
  const auto& r = trained();
  std::vector<std::pair<std::uint64_t, dq::store::TensorMap>> snaps;
  snaps.emplace_back(0, r.pre);
  snaps.emplace_back(50, r.pre);
  for (const auto& s : r.train.snapshots) {
    if (s.step > 0) snaps.emplace_back(s.step, s.checkpoint);
  }
  ev::CurveConfig cfg;
  cfg.search.grid_points = 5;
  const auto curve = ev::pseudo_ft_curve(snaps, r.post, r.calib, cfg);
  ASSERT_EQ(curve.points.size(), snaps.size() - 1);
  EXPECT_FALSE(curve.points[0].mean_loss.has_value());
  std::vector<double> xs, ys;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    ASSERT_TRUE(curve.points[i].mean_loss.has_value());
    EXPECT_TRUE(std::isfinite(*curve.points[i].mean_loss));
    xs.push_back(static_cast<double>(curve.points[i].step));
    ys.push_back(*curve.points[i].mean_loss);
  }
  ASSERT_TRUE(curve.slope.has_value());
  EXPECT_NEAR(*curve.slope, oracle::slope(xs, ys), 1e-12 + 1e-9 * std::fabs(*curve.slope));
  const auto csv = ev::curve_to_csv(curve);
  EXPECT_EQ(csv.rfind("step,mean_loss,slope\n50,degenerate,", 0), 0u);
}

TEST(Eval, CurveNeedsStepZero) {
  const auto& r = trained();
  std::vector<std::pair<std::uint64_t, dq::store::TensorMap>> snaps{{100, r.pre}, {200, r.post}};
  EXPECT_THROW(ev::pseudo_ft_curve(snaps, r.post, r.calib, {}), dq::Error);
}

TEST(Eval, SlopeOfLine) {
  EXPECT_DOUBLE_EQ(*ev::least_squares_slope({{0, 1}, {1, 3}, {2, 5}}), 2.0);
  EXPECT_FALSE(ev::least_squares_slope({{0, 1}}).has_value());
  const ev::Curve empty{{{10, std::nullopt}}, std::nullopt};
  EXPECT_EQ(ev::curve_to_csv(empty), "step,mean_loss,slope\n10,degenerate,nan\n");
}

TEST(Eval, MissingModuleIsAnError) {
  const auto& r = trained();
  auto art = quantize(3, 0.0).artifact;
  art.erase("layer1");
  EXPECT_THROW(ev::layer_report(r.post, art, {}, r.calib, {}), dq::Error);
}

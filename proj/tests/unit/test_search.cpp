// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "deltaquant/error.hpp"
#include "deltaquant/rng.hpp"
#include "deltaquant/search.hpp"
#include "oracles.hpp"

namespace dq = deltaquant;
namespace oracle = deltaquant::oracle;
namespace sr = deltaquant::search;

namespace {

dq::Matrix random_matrix(std::size_t rows, std::size_t cols, dq::Rng& rng) {
  dq::Matrix m(rows, cols);
  for (float& v : m.values()) v = static_cast<float>(rng.normal());
  return m;
}

oracle::Grid grid_of(const dq::Matrix& m) {
  oracle::Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) g[r][c] = m(r, c);
  }
  return g;
}

dq::quant::QuantConfig qcfg(unsigned bits = 3, std::size_t group = 4) {
  dq::quant::QuantConfig c;
  c.bits = bits;
  c.group_size = group;
  return c;
}

}  // namespace

TEST(Search, GridIsEndpointInclusive) {
  sr::SearchConfig cfg;
  const auto g = cfg.grid();
  ASSERT_EQ(g.size(), 20u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  cfg.grid_points = 2;
  EXPECT_EQ(cfg.grid(), (std::vector<double>{0.0, 1.0}));
  cfg.grid_points = 1;
  EXPECT_THROW(cfg.grid(), dq::Error);
  cfg.grid_points = 5;
  cfg.alpha_lo = 1.0;
  EXPECT_THROW(cfg.grid(), dq::Error);
}

TEST(Search, NormalizeScale) {
  EXPECT_EQ(sr::normalize_scale(std::vector<double>{1, 1, 1}), (std::vector<double>{1, 1, 1}));
  const auto s = sr::normalize_scale(std::vector<double>{1, 100});
  EXPECT_DOUBLE_EQ(s[0], 0.1);
  EXPECT_DOUBLE_EQ(s[1], 10.0);
  EXPECT_EQ(sr::normalize_scale(std::vector<double>{3.7, 3.7}), (std::vector<double>{1, 1}));
  EXPECT_THROW(sr::normalize_scale(std::vector<double>{1, 0}), dq::Error);
}

TEST(Search, NormalizeIgnoresExactMultiples) {
  const std::vector<double> base{0.75, 1.25, 3.0, 9.5, 17.0};
  const auto ref = sr::normalize_scale(base);
  for (double c : {3.0, 0.3125, 7.0, 1024.0}) {
    std::vector<double> scaled(base);
    for (double& v : scaled) v *= c;
    EXPECT_EQ(sr::normalize_scale(scaled), ref) << c;
  }
}

TEST(Search, LossMatchesLoops) {
  dq::Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const auto w = random_matrix(8, 8, rng);
    const auto x = random_matrix(16, 8, rng);
    std::vector<float> s(8);
    for (float& v : s) v = static_cast<float>(rng.uniform(0.3, 3.0));
    const double loss = sr::quant_loss(w, x, s, qcfg());
    const auto approx = dq::quant::dequantize(
        dq::quant::quantize(w, qcfg(), s, std::vector<bool>(8, false)));
    const double expect = oracle::output_mse(grid_of(w), grid_of(approx), grid_of(x));
    EXPECT_NEAR(loss, expect, 1e-6 * expect);
  }
}

TEST(Search, OnesScaleIsPlainRtn) {
  dq::Rng rng(6);
  const auto w = random_matrix(8, 8, rng);
  const auto x = random_matrix(16, 8, rng);
  const std::vector<float> ones(8, 1.0f);
  const auto approx = dq::quant::dequantize(dq::quant::rtn_quantize(w, qcfg()));
  EXPECT_NEAR(sr::quant_loss(w, x, ones, qcfg()),
              oracle::output_mse(grid_of(w), grid_of(approx), grid_of(x)), 1e-12);
}

TEST(Search, RepresentableWeightHasZeroLoss) {
  dq::Rng rng(7);
  dq::Matrix w(4, 8);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 8; ++c) w(r, c) = static_cast<float>(r) - 1.5f;
  }
  const auto x = random_matrix(10, 8, rng);
  EXPECT_EQ(sr::quant_loss(w, x, std::vector<float>(8, 1.0f), qcfg(3, 8)), 0.0);
}

TEST(Search, LossErrors) {
  dq::Rng rng(8);
  const auto w = random_matrix(4, 4, rng);
  const auto x = random_matrix(3, 4, rng);
  EXPECT_THROW(sr::quant_loss(w, x, std::vector<float>{1, 1, 0, 1}, qcfg()), dq::Error);
  EXPECT_THROW(sr::quant_loss(w, x, std::vector<float>{1, 1, 1}, qcfg()), dq::Error);
  EXPECT_THROW(sr::quant_loss(w, random_matrix(3, 5, rng), std::vector<float>(4, 1.0f), qcfg()),
               dq::Error);
}

TEST(Search, ConstantImportancePicksZero) {
  dq::Rng rng(9);
  const auto w = random_matrix(8, 8, rng);
  const auto x = random_matrix(16, 8, rng);
  const auto r = sr::search_scale("m", w, std::vector<float>(8, 4.0f), x, sr::SearchConfig{}, qcfg());
  EXPECT_EQ(r.alpha_star, 0.0);
  EXPECT_EQ(r.best_loss, r.rtn_loss);
  EXPECT_EQ(r.scale, std::vector<float>(8, 1.0f));
  EXPECT_EQ(r.loss_curve.size(), 20u);
}

TEST(Search, MatchesExhaustiveGrid) {
  dq::Rng rng(10);
  for (int t = 0; t < 10; ++t) {
    const auto w = random_matrix(8, 8, rng);
    const auto x = random_matrix(16, 8, rng);
    std::vector<float> imp(8);
    for (float& v : imp) v = static_cast<float>(rng.uniform(0.5, 50.0));
    sr::SearchConfig cfg;
    cfg.threads = 3;
    const auto r = sr::search_scale("m", w, imp, x, cfg, qcfg());
    double best = INFINITY;
    double best_alpha = -1;
    for (double a : oracle::alpha_grid(0, 1, 20)) {
      const auto s = oracle::scale(imp, a, true);
      const auto approx = dq::quant::dequantize(dq::quant::quantize(w, qcfg(), s, std::vector<bool>(8, false)));
      const double loss = oracle::output_mse(grid_of(w), grid_of(approx), grid_of(x));
      if (loss < best) {
        best = loss;
        best_alpha = a;
      }
    }
    EXPECT_EQ(r.alpha_star, best_alpha);
    EXPECT_LE(r.best_loss, r.rtn_loss + 1e-9);
  }
}

TEST(Search, ThreadCountDoesNotChangeResult) {
  dq::Rng rng(11);
  const auto w = random_matrix(8, 16, rng);
  const auto x = random_matrix(32, 16, rng);
  std::vector<float> imp(16);
  for (float& v : imp) v = static_cast<float>(rng.uniform(0.5, 50.0));
  sr::SearchConfig one;
  sr::SearchConfig four;
  four.threads = 4;
  const auto a = sr::search_scale("m", w, imp, x, one, qcfg());
  const auto b = sr::search_scale("m", w, imp, x, four, qcfg());
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.scale, b.scale);
}

TEST(Search, UnnormalizedScaleUsesRawPower) {
  const auto s = sr::scale_for_alpha(std::vector<float>{4.0f, 9.0f}, 0.5, false);
  EXPECT_EQ(s, (std::vector<float>{2.0f, 3.0f}));
}

TEST(Search, ReportLines) {
  sr::SearchResult r;
  r.module = "layer0";
  r.alpha_star = 0.5;
  r.rtn_loss = 0.25;
  r.best_loss = 0.125;
  r.loss_curve = {{0.0, 0.25}, {0.5, 0.125}};
  sr::SearchConfig cfg;
  cfg.grid_points = 2;
  EXPECT_EQ(sr::report_to_jsonl({r}, cfg),
            "{\"module\":\"layer0\",\"alpha_star\":0.5,\"rtn_loss\":0.25,\"best_loss\":0.125,"
            "\"loss_curve\":[[0,0.25],[0.5,0.125]],\"grid_points\":2,"
            "\"alpha_grid\":\"endpoint-inclusive\",\"normalize_scale\":true}\n");
}

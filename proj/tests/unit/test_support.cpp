// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>

#include "deltaquant/error.hpp"
#include "deltaquant/format.hpp"
#include "deltaquant/matrix.hpp"
#include "deltaquant/parallel.hpp"
#include "deltaquant/rng.hpp"

namespace dq = deltaquant;

TEST(Format, ShortestRoundTrip) {
  EXPECT_EQ(dq::format_number(1.0), "1");
  EXPECT_EQ(dq::format_number(0.1), "0.1");
  EXPECT_EQ(dq::format_number(-2.5e-10), "-2.5e-10");
  EXPECT_EQ(dq::format_number(NAN), "nan");
  EXPECT_EQ(dq::parse_double(dq::format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(Format, StrictParsing) {
  EXPECT_EQ(dq::parse_uint("42"), 42u);
  EXPECT_THROW(dq::parse_uint("-1"), dq::Error);
  EXPECT_THROW(dq::parse_uint("4x"), dq::Error);
  EXPECT_THROW(dq::parse_double(""), dq::Error);
  EXPECT_TRUE(dq::parse_bool("yes"));
  EXPECT_THROW(dq::parse_bool("maybe"), dq::Error);
  EXPECT_EQ(dq::split(" a, b ,c", ','), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(dq::split("  ", ',').empty());
  EXPECT_EQ(dq::join({"x", "y"}, "-"), "x-y");
}

TEST(Matrix, ShapeChecks) {
  EXPECT_THROW(dq::Matrix(2, 2, std::vector<float>{1, 2, 3}), dq::Error);
  const dq::Matrix m(3, 2, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.head_rows(2), dq::Matrix(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(m.head_rows(10), m);
}

TEST(Rng, Deterministic) {
  dq::Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.uniform(), b.uniform());
    EXPECT_EQ(a.normal(), b.normal());
  }
  dq::Rng c(6);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) sum += c.normal();
  EXPECT_LT(std::fabs(sum / 20000), 0.05);
}

TEST(Parallel, CoversEveryIndexOnce) {
  for (std::size_t threads : {1u, 2u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(37);
    dq::parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Parallel, RethrowsLowestIndex) {
  try {
    dq::parallel_for(10, 4, [](std::size_t i) {
      if (i == 3 || i == 8) throw std::runtime_error("at " + std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "at 3");
  }
}

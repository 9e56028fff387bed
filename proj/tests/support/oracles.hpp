// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

// Straight-line reference implementations used to cross-check the library.
// They trade speed for obviousness and share no code with core/.

#pragma once

#include <cstdint>
#include <vector>

namespace deltaquant::oracle {

using Grid = std::vector<std::vector<double>>;  // [rows][cols]

/// Zero-aware two-branch mapping written directly from its definition.
double both_ends_zero(double d, double min_pos, double median_pos, double max, double y_min,
                      double y_max, double eps);

/// Column importance of a single delta matrix with explicit band loops.
/// Statistics are recomputed from `delta` itself.
std::vector<double> importance_both_ends_zero(const Grid& delta, std::size_t slices,
                                              double y_min, double y_max, double eps);

/// Plain per-column count of entries <= eps.
std::vector<double> raw_zero_counts(const Grid& delta, double eps);

/// Bit-by-bit packing through a 64-bit accumulator.
std::vector<std::uint8_t> pack(const std::vector<unsigned>& codes, unsigned bits);

/// Indices of the top-k scores, ties to the lower index.
std::vector<bool> top_fraction(const std::vector<float>& scores, double fraction);

/// mean over n, o of (sum_c what[o][c] x[n][c] - sum_c w[o][c] x[n][c])^2.
double output_mse(const Grid& w, const Grid& what, const Grid& x);

/// Endpoint-inclusive alpha grid.
std::vector<double> alpha_grid(double lo, double hi, std::size_t points);

/// normalize-then-power scale for one alpha.
std::vector<float> scale(const std::vector<float>& importance, double alpha, bool normalize);

/// Ordinary least squares slope.
double slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace deltaquant::oracle

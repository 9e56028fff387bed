// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deltaquant/matrix.hpp"
#include "deltaquant/tensor_store.hpp"

namespace deltaquant::quant {

struct QuantConfig {
  unsigned bits = 3;
  std::size_t group_size = 128;
  double protect_fraction = 0.0;

  void validate() const;
  unsigned max_code() const { return (1u << bits) - 1u; }
};

/// Group-quantized weight [rows, cols]. Groups run along the input axis;
/// the last group of a row may be short.
struct QuantizedTensor {
  std::string module;
  unsigned bits = 3;
  std::size_t group_size = 0;  // effective: min(requested, cols)
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> codes;        // unpacked, rows * cols
  Matrix scales;                          // [rows, n_groups]
  std::vector<std::uint8_t> zero_points;  // rows * n_groups
  std::vector<float> channel_scale;       // [cols]
  std::vector<bool> protected_mask;       // [cols]
  Matrix protected_values;                // [rows, popcount(mask)], unscaled

  std::size_t n_groups() const { return group_size == 0 ? 0 : (cols + group_size - 1) / group_size; }
  std::size_t protected_count() const;

  /// Throws kInvalidTensor on any broken invariant.
  void validate() const;

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

/// Scale of one quantization group and its zero point.
struct GroupParams {
  float scale = 1.0f;
  std::uint8_t zero_point = 0;
};

/// Grid for a group of values. The grid always contains zero, and its end
/// codes sit exactly on the group extremes so no code is ever clamped.
GroupParams fit_group(std::span<const float> values, unsigned bits);
std::uint8_t encode(float w, GroupParams p, unsigned bits);
float decode(std::uint8_t code, GroupParams p);

/// Plain round-to-nearest: ones scale, nothing protected.
QuantizedTensor rtn_quantize(const Matrix& weight, const QuantConfig& cfg);

/// Quantizes weight * diag(channel_scale). Masked channels keep their
/// original values in `protected_values` but still shape the group grids.
QuantizedTensor quantize(const Matrix& weight, const QuantConfig& cfg,
                         std::span<const float> channel_scale,
                         const std::vector<bool>& protected_mask);

/// (code - zero_point) * scale, divided by channel_scale; protected
/// channels are copied back verbatim.
Matrix dequantize(const QuantizedTensor& q);

/// LSB-first bitstream. 4-bit: low nibble first; 3-bit: eight codes per
/// three bytes. Tails are zero padded.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, unsigned bits);
std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count,
                                       unsigned bits);
std::size_t packed_size(std::size_t count, unsigned bits);

/// Top round(fraction * n) channels by score; ties go to the lower index.
std::vector<bool> select_protected(std::span<const float> scores, double fraction);

std::vector<std::uint8_t> pack_mask(const std::vector<bool>& mask);
std::vector<bool> unpack_mask(std::span<const std::uint8_t> bytes, std::size_t count);

using Artifact = std::map<std::string, QuantizedTensor>;

store::TensorMap artifact_to_container(const Artifact& artifact, const QuantConfig& cfg);
Artifact artifact_from_container(const store::TensorMap& map);

}  // namespace deltaquant::quant

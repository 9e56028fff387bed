// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltaquant/quant.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deltaquant/error.hpp"
#include "deltaquant/format.hpp"

namespace deltaquant::quant {

namespace {

/// Rounds a positive scale to (24 - bits) significant bits so that every
/// product k * scale with |k| < 2^bits is exact in float32.
float snap_scale(double s, unsigned bits) {
  int exp = 0;
  const double mant = std::frexp(s, &exp);
  const double unit = std::ldexp(1.0, static_cast<int>(24 - bits));
  return static_cast<float>(std::ldexp(std::round(mant * unit) / unit, exp));
}

double grid_step(float s, unsigned bits) {
  int exp = 0;
  std::frexp(static_cast<double>(s), &exp);
  return std::ldexp(1.0, exp - static_cast<int>(24 - bits));
}

long round_code(double x) { return std::lround(x); }

bool grid_fits(float s, double lo, double hi, unsigned bits, long* zp_out) {
  if (!(s > 0.0f) || !std::isfinite(s)) return false;
  const long maxq = (1L << bits) - 1;
  const long zp = round_code(-lo / s);
  if (zp < 0 || zp > maxq) return false;
  if (lo < 0.0 && round_code(lo / s) + zp != 0) return false;
  if (hi > 0.0 && round_code(hi / s) + zp != maxq) return false;
  if (hi == 0.0 && zp != maxq) return false;
  if (lo == 0.0 && zp != 0) return false;
  *zp_out = zp;
  return true;
}

GroupParams constant_group(float c, unsigned bits) {
  const unsigned maxq = (1u << bits) - 1u;
  if (c == 0.0f) return {1.0f, 0};
  const float mag = std::fabs(c);
  const float s = snap_scale(static_cast<double>(mag) / maxq, bits);
  if (s * static_cast<float>(maxq) == mag) {
    return {s, static_cast<std::uint8_t>(c > 0.0f ? 0 : maxq)};
  }
  return {mag, static_cast<std::uint8_t>(c > 0.0f ? 0 : 1)};
}

void check_bits(unsigned bits) {
  if (bits < 1 || bits > 8) {
    fail(ErrorCode::kInvalidArgument, "bits must be in [1, 8], got " + std::to_string(bits));
  }
}

}  // namespace

void QuantConfig::validate() const {
  check_bits(bits);
  if (group_size < 1) fail(ErrorCode::kInvalidArgument, "group_size must be >= 1");
  if (!(protect_fraction >= 0.0 && protect_fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "protect_fraction must be in [0, 1]");
  }
}

std::size_t QuantizedTensor::protected_count() const {
  return static_cast<std::size_t>(std::count(protected_mask.begin(), protected_mask.end(), true));
}

void QuantizedTensor::validate() const {
  const auto bad = [&](const std::string& what) {
    fail(ErrorCode::kInvalidTensor, "quantized '" + module + "': " + what);
  };
  if (bits < 1 || bits > 8) bad("bits out of range");
  if (group_size < 1 && cols > 0) bad("group_size is zero");
  const unsigned maxq = (1u << bits) - 1u;
  if (codes.size() != rows * cols) bad("code count does not match shape");
  if (scales.rows() != rows || scales.cols() != n_groups()) bad("scales shape mismatch");
  if (zero_points.size() != rows * n_groups()) bad("zero point count mismatch");
  if (channel_scale.size() != cols) bad("channel_scale length mismatch");
  if (protected_mask.size() != cols) bad("protected mask length mismatch");
  if (protected_values.rows() != rows || protected_values.cols() != protected_count()) {
    bad("protected_values shape mismatch");
  }
  for (auto c : codes) {
    if (c > maxq) bad("code out of range");
  }
  for (auto z : zero_points) {
    if (z > maxq) bad("zero point out of range");
  }
  for (float s : scales.values()) {
    if (!std::isfinite(s) || !(s > 0.0f)) bad("non-positive group scale");
  }
  for (float s : channel_scale) {
    if (!std::isfinite(s) || !(s > 0.0f)) bad("non-positive channel scale");
  }
}

GroupParams fit_group(std::span<const float> values, unsigned bits) {
  check_bits(bits);
  if (values.empty()) return {};
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  if (*mn == *mx) return constant_group(*mn, bits);
  const double lo = std::min(static_cast<double>(*mn), 0.0);
  const double hi = std::max(static_cast<double>(*mx), 0.0);
  const unsigned maxq = (1u << bits) - 1u;
  const float base = snap_scale((hi - lo) / maxq, bits);
  const double step = grid_step(base, bits);
  long zp = 0;
  for (int j = 0; j <= 16; ++j) {
    for (int sign : {-1, 1}) {
      if (j == 0 && sign > 0) continue;
      const float s = snap_scale(static_cast<double>(base) + sign * j * step, bits);
      if (grid_fits(s, lo, hi, bits, &zp)) return {s, static_cast<std::uint8_t>(zp)};
    }
  }
  // Unreachable for finite input; keep the plain grid with clamped codes.
  zp = std::clamp<long>(round_code(-lo / base), 0, maxq);
  return {base, static_cast<std::uint8_t>(zp)};
}

std::uint8_t encode(float w, GroupParams p, unsigned bits) {
  const long maxq = (1L << bits) - 1;
  const long q = round_code(static_cast<double>(w) / p.scale) + p.zero_point;
  return static_cast<std::uint8_t>(std::clamp<long>(q, 0, maxq));
}

float decode(std::uint8_t code, GroupParams p) {
  return static_cast<float>(static_cast<int>(code) - static_cast<int>(p.zero_point)) * p.scale;
}

QuantizedTensor rtn_quantize(const Matrix& weight, const QuantConfig& cfg) {
  const std::vector<float> ones(weight.cols(), 1.0f);
  return quantize(weight, cfg, ones, std::vector<bool>(weight.cols(), false));
}

QuantizedTensor quantize(const Matrix& weight, const QuantConfig& cfg,
                         std::span<const float> channel_scale,
                         const std::vector<bool>& protected_mask) {
  cfg.validate();
  const std::size_t rows = weight.rows();
  const std::size_t cols = weight.cols();
  if (channel_scale.size() != cols || protected_mask.size() != cols) {
    fail(ErrorCode::kShapeMismatch, "channel scale/mask length differs from " +
                                        std::to_string(cols) + " input channels");
  }
  for (float s : channel_scale) {
    if (!std::isfinite(s) || !(s > 0.0f)) {
      fail(ErrorCode::kInvalidArgument, "channel scale entries must be positive and finite");
    }
  }
  for (float w : weight.values()) {
    if (!std::isfinite(w)) fail(ErrorCode::kNonFinite, "weight contains a non-finite value");
  }

  QuantizedTensor q;
  q.bits = cfg.bits;
  q.group_size = std::max<std::size_t>(1, std::min(cfg.group_size, cols));
  q.rows = rows;
  q.cols = cols;
  q.channel_scale.assign(channel_scale.begin(), channel_scale.end());
  q.protected_mask = protected_mask;
  const std::size_t groups = q.n_groups();
  q.codes.resize(rows * cols);
  q.scales = Matrix(rows, groups);
  q.zero_points.resize(rows * groups);

  std::vector<std::size_t> prot;
  for (std::size_t c = 0; c < cols; ++c) {
    if (protected_mask[c]) prot.push_back(c);
  }
  q.protected_values = Matrix(rows, prot.size());

  std::vector<float> scaled(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto src = weight.row(r);
    for (std::size_t c = 0; c < cols; ++c) scaled[c] = src[c] * channel_scale[c];
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t begin = g * q.group_size;
      const std::size_t end = std::min(cols, begin + q.group_size);
      const std::span<const float> group(scaled.data() + begin, end - begin);
      const GroupParams p = fit_group(group, cfg.bits);
      q.scales(r, g) = p.scale;
      q.zero_points[r * groups + g] = p.zero_point;
      for (std::size_t c = begin; c < end; ++c) {
        q.codes[r * cols + c] = encode(scaled[c], p, cfg.bits);
      }
    }
    for (std::size_t k = 0; k < prot.size(); ++k) q.protected_values(r, k) = src[prot[k]];
  }
  return q;
}

Matrix dequantize(const QuantizedTensor& q) {
  q.validate();
  Matrix out(q.rows, q.cols);
  const std::size_t groups = q.n_groups();
  for (std::size_t r = 0; r < q.rows; ++r) {
    std::size_t k = 0;
    for (std::size_t c = 0; c < q.cols; ++c) {
      if (q.protected_mask[c]) {
        out(r, c) = q.protected_values(r, k++);
        continue;
      }
      const std::size_t g = c / q.group_size;
      const GroupParams p{q.scales(r, g), q.zero_points[r * groups + g]};
      const float v = decode(q.codes[r * q.cols + c], p);
      out(r, c) = q.channel_scale[c] == 1.0f ? v : v / q.channel_scale[c];
    }
  }
  for (float v : out.values()) {
    if (!std::isfinite(v)) fail(ErrorCode::kNonFinite, "dequantized '" + q.module + "' is not finite");
  }
  return out;
}

std::size_t packed_size(std::size_t count, unsigned bits) {
  check_bits(bits);
  const std::size_t g = std::gcd<std::size_t>(8, bits);
  const std::size_t block_codes = 8 / g;
  const std::size_t block_bytes = bits / g;
  return (count + block_codes - 1) / block_codes * block_bytes;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint8_t> codes, unsigned bits) {
  std::vector<std::uint8_t> out(packed_size(codes.size(), bits), 0);
  const unsigned limit = 1u << bits;
  std::size_t bit = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] >= limit) {
      fail(ErrorCode::kOutOfRange, "code " + std::to_string(codes[i]) + " at index " +
                                       std::to_string(i) + " does not fit in " +
                                       std::to_string(bits) + " bits");
    }
    for (unsigned b = 0; b < bits; ++b, ++bit) {
      if ((codes[i] >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
  return out;
}

std::vector<std::uint8_t> unpack_codes(std::span<const std::uint8_t> packed, std::size_t count,
                                       unsigned bits) {
  const std::size_t expected = packed_size(count, bits);
  if (packed.size() != expected) {
    fail(ErrorCode::kShapeMismatch, "packed buffer holds " + std::to_string(packed.size()) +
                                        " bytes; " + std::to_string(count) + " codes at " +
                                        std::to_string(bits) + " bits need " +
                                        std::to_string(expected));
  }
  std::vector<std::uint8_t> out(count, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    unsigned v = 0;
    for (unsigned b = 0; b < bits; ++b, ++bit) v |= ((packed[bit / 8] >> (bit % 8)) & 1u) << b;
    out[i] = static_cast<std::uint8_t>(v);
  }
  return out;
}

std::vector<bool> select_protected(std::span<const float> scores, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, "protect fraction must be in [0, 1]");
  }
  const std::size_t n = scores.size();
  const auto keep = static_cast<std::size_t>(std::round(fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < std::min(keep, n); ++i) mask[order[i]] = true;
  return mask;
}

std::vector<std::uint8_t> pack_mask(const std::vector<bool>& mask) {
  std::vector<std::uint8_t> out((mask.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

std::vector<bool> unpack_mask(std::span<const std::uint8_t> bytes, std::size_t count) {
  if (bytes.size() != (count + 7) / 8) {
    fail(ErrorCode::kShapeMismatch, "mask buffer has " + std::to_string(bytes.size()) +
                                        " bytes for " + std::to_string(count) + " channels");
  }
  std::vector<bool> mask(count);
  for (std::size_t i = 0; i < count; ++i) mask[i] = (bytes[i / 8] >> (i % 8)) & 1u;
  return mask;
}

store::TensorMap artifact_to_container(const Artifact& artifact, const QuantConfig& cfg) {
  store::TensorMap map;
  for (const auto& [module, q] : artifact) {
    q.validate();
    const store::Shape shape{q.rows, q.cols};
    map.put(module + ".codes", store::Tensor::from_bytes(shape, pack_codes(q.codes, q.bits)));
    map.put(module + ".scales", store::Tensor::from_matrix(q.scales));
    std::vector<float> zeros(q.zero_points.begin(), q.zero_points.end());
    map.put(module + ".zeros",
            store::Tensor::from_floats({q.rows, q.n_groups()}, std::move(zeros)));
    map.put(module + ".channel_scale", store::Tensor::from_vector(q.channel_scale));
    map.put(module + ".protected",
            store::Tensor::from_bytes({q.cols}, pack_mask(q.protected_mask)));
    map.put(module + ".protected_values", store::Tensor::from_matrix(q.protected_values));
  }
  map.meta["kind"] = "quantized";
  map.meta["bits"] = std::to_string(cfg.bits);
  map.meta["group_size"] = std::to_string(cfg.group_size);
  map.meta["protect_fraction"] = format_number(cfg.protect_fraction);
  return map;
}

Artifact artifact_from_container(const store::TensorMap& map) {
  for (const char* key : {"bits", "group_size"}) {
    if (!map.meta.count(key)) {
      fail(ErrorCode::kCorruptHeader, std::string("quantized container lacks meta '") + key + "'");
    }
  }
  const auto bits = static_cast<unsigned>(parse_uint(map.meta.at("bits")));
  const auto group = static_cast<std::size_t>(parse_uint(map.meta.at("group_size")));
  check_bits(bits);
  if (group < 1) fail(ErrorCode::kCorruptHeader, "group_size must be >= 1");

  constexpr std::string_view kCodes = ".codes";
  Artifact out;
  for (const auto& [name, t] : map.tensors) {
    if (name.size() <= kCodes.size() || !name.ends_with(kCodes)) continue;
    const std::string module = name.substr(0, name.size() - kCodes.size());
    if (t.rank() != 2) fail(ErrorCode::kInvalidTensor, "'" + name + "' must be rank 2");
    QuantizedTensor q;
    q.module = module;
    q.bits = bits;
    q.rows = t.shape()[0];
    q.cols = t.shape()[1];
    q.group_size = std::max<std::size_t>(1, std::min(group, q.cols));
    q.codes = unpack_codes(t.bytes(), q.rows * q.cols, bits);
    q.scales = map.at(module + ".scales").to_matrix();
    const auto zeros = map.at(module + ".zeros").floats();
    q.zero_points.reserve(zeros.size());
    for (float z : zeros) {
      if (!(z >= 0.0f && z <= 255.0f) || z != std::floor(z)) {
        fail(ErrorCode::kInvalidTensor, "'" + module + ".zeros' holds a non-integral zero point");
      }
      q.zero_points.push_back(static_cast<std::uint8_t>(z));
    }
    q.channel_scale = map.at(module + ".channel_scale").to_vector();
    q.protected_mask = unpack_mask(map.at(module + ".protected").bytes(), q.cols);
    q.protected_values = map.at(module + ".protected_values").to_matrix();
    if (q.protected_values.rows() != q.rows) {
      // A [rows, 0] tensor round-trips fine; a rank-1 empty one would not.
      q.protected_values = Matrix(q.rows, q.protected_count(),
                                  std::move(q.protected_values).release());
    }
    q.validate();
    out.emplace(module, std::move(q));
  }
  return out;
}

}  // namespace deltaquant::quant

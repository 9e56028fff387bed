// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deltaquant/matrix.hpp"

namespace deltaquant::store {

enum class DType : std::uint8_t { kF32, kU8 };

std::string_view to_string(DType dtype);

using Shape = std::vector<std::uint64_t>;

std::uint64_t element_count(const Shape& shape);

/// A rank-1 or rank-2 buffer. Float tensors hold one float per element;
/// u8 tensors hold an opaque (possibly packed) byte buffer together with the
/// logical element count of `shape`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_floats(Shape shape, std::vector<float> values);
  static Tensor from_bytes(Shape shape, std::vector<std::uint8_t> bytes);
  static Tensor from_matrix(const Matrix& m);
  static Tensor from_vector(std::span<const float> v);

  DType dtype() const noexcept { return dtype_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::uint64_t elements() const noexcept { return element_count(shape_); }
  std::size_t nbytes() const noexcept;

  std::span<const float> floats() const;
  std::span<const std::uint8_t> bytes() const;
  /// Raw little-endian storage, whatever the dtype.
  std::vector<std::uint8_t> raw() const;

  Matrix to_matrix() const;
  std::vector<float> to_vector() const;

  /// Byte-level equality (distinguishes -0.0 from 0.0, compares NaN payloads).
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  DType dtype_ = DType::kF32;
  Shape shape_;
  std::variant<std::vector<float>, std::vector<std::uint8_t>> data_;
};

/// Named tensors plus string metadata; the in-memory form of a `.dqt` file.
struct TensorMap {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> meta;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  void put(const std::string& name, Tensor tensor);

  friend bool operator==(const TensorMap&, const TensorMap&) = default;
};

void validate_name(const std::string& name);
void validate(const TensorMap& map);

/// Container layout: "DQTC", u32 version, u64 header length, JSON header,
/// zero padding to a 64-byte boundary, then 64-byte aligned tensor payloads.
std::vector<std::uint8_t> serialize(const TensorMap& map);
TensorMap deserialize(std::span<const std::uint8_t> bytes);

void save_container(const TensorMap& map, const std::filesystem::path& path);
TensorMap load_container(const std::filesystem::path& path);

/// Throws kMissingTensor / kShapeMismatch / kDTypeMismatch naming the first
/// offending tensor in lexicographic order.
void check_compatible(const TensorMap& a, const TensorMap& b);

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kAlignment = 64;

}  // namespace deltaquant::store

// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltaquant/matrix.hpp"

#include <algorithm>
#include <string>

#include "deltaquant/error.hpp"

namespace deltaquant {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    fail(ErrorCode::kShapeMismatch, "matrix buffer holds " + std::to_string(data_.size()) +
                                        " values, expected " + std::to_string(rows * cols));
  }
}

Matrix Matrix::head_rows(std::size_t n) const {
  const std::size_t keep = std::min(n, rows_);
  std::vector<float> out(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(keep * cols_));
  return Matrix(keep, cols_, std::move(out));
}

}  // namespace deltaquant

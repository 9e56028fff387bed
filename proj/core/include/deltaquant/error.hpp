// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace deltaquant {

enum class ErrorCode {
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kCorruptHeader,
  kOverlap,
  kTruncatedData,
  kDuplicateName,
  kInvalidTensor,
  kMissingTensor,
  kShapeMismatch,
  kDTypeMismatch,
  kInvalidArgument,
  kDegenerateDeltas,
  kMissingInput,
  kDivergence,
  kOutOfRange,
  kNonFinite,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace deltaquant

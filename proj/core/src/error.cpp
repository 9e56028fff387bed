// Copyright 2026 The DeltaQuant Authors
// SPDX-License-Identifier: Apache-2.0

#include "deltaquant/error.hpp"

namespace deltaquant {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported version";
    case ErrorCode::kCorruptHeader: return "corrupt header";
    case ErrorCode::kOverlap: return "header/data overlap";
    case ErrorCode::kTruncatedData: return "truncated data";
    case ErrorCode::kDuplicateName: return "duplicate name";
    case ErrorCode::kInvalidTensor: return "invalid tensor";
    case ErrorCode::kMissingTensor: return "missing tensor";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kDTypeMismatch: return "dtype mismatch";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDegenerateDeltas: return "degenerate deltas";
    case ErrorCode::kMissingInput: return "missing input";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kOutOfRange: return "out of range";
    case ErrorCode::kNonFinite: return "non-finite value";
  }
  return "unknown error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace deltaquant

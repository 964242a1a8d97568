// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/error.hpp"

namespace metatransfer {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::label_out_of_range: return "label_out_of_range";
    case ErrorCode::backward_without_forward: return "backward_without_forward";
    case ErrorCode::empty_batch: return "empty_batch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::unknown_mode: return "unknown_mode";
    case ErrorCode::unknown_strategy: return "unknown_strategy";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::language_mismatch: return "language_mismatch";
    case ErrorCode::zero_denominator: return "zero_denominator";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::corrupt_file: return "corrupt_file";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code),
      detail_(detail) {}

}  // namespace metatransfer

// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metatransfer {

enum class ErrorCode {
  shape_mismatch,
  label_out_of_range,
  backward_without_forward,
  empty_batch,
  invalid_argument,
  unknown_mode,
  unknown_strategy,
  invalid_config,
  language_mismatch,
  zero_denominator,
  version_mismatch,
  corrupt_file,
  io_error,
};

std::string_view to_string(ErrorCode code);

/// Every recoverable failure in the library is reported through this type.
/// `what()` is a single line of the form `<code>: <detail>` so the CLI can
/// print it verbatim.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace metatransfer

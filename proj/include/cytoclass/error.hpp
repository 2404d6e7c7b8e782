/*
 * Copyright 2026 The Cytoclass Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cytoclass {

enum class ErrorCode {
  kInvalidArgument,
  kUnsupportedFormat,
  kCorruptFile,
  kUnsupportedVariant,
  kCropLargerThanImage,
  kMissingClassDirectory,
  kEmptyDataset,
  kClassTooSmall,
  kIoError,
  kDimensionNotMultipleOfCell,
  kDimensionMismatch,
  kEmptyValidation,
  kEmptyNode,
  kMissingClass,
  kSingleClassInput,
  kInvalidConfig,
  kShapeMismatch,
  kLabelOutOfRange,
  kStaleCache,
  kLengthMismatch,
  kEmptyMatrix,
  kDegenerateClass,
  kVersionMismatch,
  kChecksumFailure,
  kTruncatedFile,
};

std::string_view error_code_name(ErrorCode code);

// Every failure raised by the library carries one of the codes above so the
// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cytoclass

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

#include "cytoclass/error.hpp"

namespace cytoclass {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kCorruptFile: return "CorruptFile";
    case ErrorCode::kUnsupportedVariant: return "UnsupportedVariant";
    case ErrorCode::kCropLargerThanImage: return "CropLargerThanImage";
    case ErrorCode::kMissingClassDirectory: return "MissingClassDirectory";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
    case ErrorCode::kClassTooSmall: return "ClassTooSmall";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kDimensionNotMultipleOfCell: return "DimensionNotMultipleOfCell";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kEmptyValidation: return "EmptyValidation";
    case ErrorCode::kEmptyNode: return "EmptyNode";
    case ErrorCode::kMissingClass: return "MissingClass";
    case ErrorCode::kSingleClassInput: return "SingleClassInput";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kLabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::kStaleCache: return "StaleCache";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptyMatrix: return "EmptyMatrix";
    case ErrorCode::kDegenerateClass: return "DegenerateClass";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kChecksumFailure: return "ChecksumFailure";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
  }
  return "Unknown";
}

}  // namespace cytoclass

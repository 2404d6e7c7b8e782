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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cytoclass/dataset.hpp"
#include "cytoclass/ensemble.hpp"
#include "cytoclass/hog.hpp"
#include "cytoclass/knn.hpp"
#include "cytoclass/resnet.hpp"
#include "cytoclass/svm.hpp"

namespace cytoclass {

inline constexpr std::uint32_t kFeatureCacheVersion = 1;
inline constexpr std::uint32_t kModelBlobVersion = 1;
inline constexpr int kModelFormatVersion = 1;

// Feature cache layout: "HOGF", u32 version, u64 rows, u64 cols, one u8
// label per row, rows * cols f64 values (row-major), u32 CRC32 of every byte
// between the magic and the checksum. All integers little-endian.
std::vector<std::uint8_t> encode_feature_cache(const FeatureMatrix& features);
/// Throws VersionMismatch, TruncatedFile, ChecksumFailure, or DimensionMismatch
/// when `expected_cols` is given and differs.
FeatureMatrix decode_feature_cache(std::span<const std::uint8_t> bytes,
                                   std::optional<Eigen::Index> expected_cols = std::nullopt);
void write_feature_cache(const std::filesystem::path& path, const FeatureMatrix& features);
FeatureMatrix read_feature_cache(const std::filesystem::path& path,
                                 std::optional<Eigen::Index> expected_cols = std::nullopt);

/// One named array of a model blob.
struct BlobSection {
  enum class Dtype : std::uint8_t { kF64 = 1, kI64 = 2 };
  Dtype dtype = Dtype::kF64;
  std::vector<std::uint64_t> shape;
  std::vector<double> reals;
  std::vector<std::int64_t> ints;

  std::uint64_t element_count() const;
};

// Blob layout: "MDLB", u32 version, u64 payload length, payload, u32 CRC32 of
// version, length and payload. The payload holds the model type string and a
// table of sections (name, dtype, shape, little-endian data).
struct Blob {
  std::string model_type;
  std::map<std::string, BlobSection> sections;

  void put(const std::string& name, std::vector<std::uint64_t> shape, std::vector<double> values);
  void put(const std::string& name, std::vector<std::uint64_t> shape, std::vector<std::int64_t> values);
  const BlobSection& at(const std::string& name) const;
  const std::vector<double>& reals(const std::string& name) const;
  const std::vector<std::int64_t>& ints(const std::string& name) const;
};

std::vector<std::uint8_t> encode_blob(const Blob& blob);
Blob decode_blob(std::span<const std::uint8_t> bytes);

/// Preprocessing the model expects at prediction time.
struct InputPipeline {
  PreprocessConfig preprocess;
  HogConfig hog;
  ChannelStats stats;  // resnet input normalization
};

using ModelVariant = std::variant<KnnModel, Forest, BoostedEnsemble, MultiSvm, nn::ResidualNetwork<double>,
                                  nn::ResidualNetwork<float>>;

struct StoredModel {
  ModelVariant model;
  InputPipeline pipeline;
  nlohmann::json config = nlohmann::json::object();  // training hyperparameters, echoed
  std::uint64_t seed = 0;

  /// knn, rf, gbm, svm or resnet.
  std::string model_type() const;
  bool uses_images() const;
};

/// Writes the JSON envelope at `path` and the blob next to it
/// (`<filename>.mdlb`).
void save_model(const std::filesystem::path& path, const StoredModel& model);
/// Throws VersionMismatch, ChecksumFailure, TruncatedFile or CorruptFile and
/// never returns a partially loaded model.
StoredModel load_model(const std::filesystem::path& path);

/// Native per-class scores (vote fractions, probabilities or margins) for
/// feature rows of a classical model.
Eigen::MatrixXd predict_feature_scores(const StoredModel& model, const RowMatrix& features);
/// Softmax probabilities of a network for unit-scale planes.
Eigen::MatrixXd predict_plane_scores(const StoredModel& model, const std::vector<Plane>& unit_planes);

}  // namespace cytoclass

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

#include <cstddef>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "cytoclass/dataset.hpp"
#include "cytoclass/image.hpp"

namespace cytoclass {

/// Row-major dense matrix; one example per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct HogConfig {
  int cell_size = 8;
  int block_size = 2;    // cells per block side
  int block_stride = 1;  // in cells
  int n_bins = 9;
  bool signed_gradients = false;
  double clip = 0.2;  // L2-Hys threshold

  void validate() const;
};

/// Feature rows plus aligned class labels.
struct FeatureMatrix {
  RowMatrix values;
  std::vector<int> labels;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  /// Rows at `indices`, in that order.
  FeatureMatrix subset(const std::vector<std::size_t>& indices) const;
};

std::size_t hog_feature_len(const HogConfig& cfg, int width, int height);

/// Dalal-Triggs HOG: [-1, 0, 1] gradients with edge replication, per-cell
/// orientation histograms with linear interpolation between the two nearest
/// bin centers, L2-Hys block normalization, blocks in row-major order.
Eigen::VectorXd extract_hog(const Plane& plane, const HogConfig& cfg);

/// HOG rows for every manifest record (all splits, manifest order).
FeatureMatrix extract_features(const std::filesystem::path& root, const SplitManifest& split,
                               const PreprocessConfig& preprocess, const HogConfig& hog);

}  // namespace cytoclass

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
#include <vector>

#include <Eigen/Dense>

#include "cytoclass/hog.hpp"

namespace cytoclass {

enum class KnnWeighting { kMajority, kInverseDistance };

struct Neighbor {
  std::size_t index;
  double distance;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Stores the training matrix verbatim.
struct KnnModel {
  FeatureMatrix train;
  int k = 5;
  KnnWeighting weighting = KnnWeighting::kMajority;

  void validate() const;
};

/// The k nearest training rows by Euclidean distance, ordered by
/// (distance, row index). Uses partial-distance early exit; the squared
/// distance of every accepted row is accumulated in column order, so results
/// equal an exhaustive scan bit for bit.
std::vector<Neighbor> nearest_neighbors(const RowMatrix& train, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                        std::size_t k);

/// Vote fractions (majority) or normalized 1 / (d + 1e-12) weights.
Eigen::VectorXd knn_scores_from_neighbors(const std::vector<Neighbor>& neighbors, const std::vector<int>& labels,
                                          KnnWeighting weighting, int n_classes);

Eigen::VectorXd knn_predict_scores(const KnnModel& m, const Eigen::Ref<const Eigen::RowVectorXd>& x);

inline const std::vector<int>& default_k_candidates() {
  static const std::vector<int> grid = {1, 3, 5, 7, 9, 11, 13, 15};
  return grid;
}

/// Candidate with the best validation accuracy; ties go to the smaller k.
int select_k(const FeatureMatrix& train, const FeatureMatrix& val, std::vector<int> candidates,
             KnnWeighting weighting = KnnWeighting::kMajority);

}  // namespace cytoclass

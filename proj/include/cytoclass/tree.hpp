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
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cytoclass/hog.hpp"
#include "cytoclass/random.hpp"

namespace cytoclass {

enum class TreeMode { kClassify, kRegress };

struct TreeConfig {
  int max_features = 0;  // 0: all features
  int min_leaf = 1;
  int max_depth = 0;  // 0: unlimited
  int n_classes = 5;
};

/// Flat binary tree. Internal nodes send x left iff x[feature] <= threshold.
/// Leaves carry a row of `leaf_values`: class counts when classifying, a
/// single real when regressing.
struct DecisionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int depth = 0;

    bool is_leaf() const { return feature < 0; }
  };

  TreeMode mode = TreeMode::kClassify;
  std::vector<Node> nodes;
  Eigen::MatrixXd leaf_values;  // one row per node; rows of internal nodes are zero

  int leaf_index(const Eigen::Ref<const Eigen::RowVectorXd>& x) const;
  Eigen::RowVectorXd leaf_value(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return leaf_values.row(leaf_index(x));
  }
  int depth() const;
  std::size_t leaf_count() const;
};

/// Ascending row order of every column of a matrix. Lets split search on
/// large nodes scan instead of sort.
struct PresortedColumns {
  std::vector<std::vector<std::uint32_t>> order;

  explicit PresortedColumns(const RowMatrix& x);
};

/// 1 - sum (c_i / n)^2.
double gini_impurity(std::span<const std::size_t> counts);

/// Greedy recursive partitioning of the rows listed in `samples` (repeats
/// allowed). Classification draws max_features distinct columns per node from
/// `rng` and minimizes weighted Gini; regression minimizes the summed squared
/// error over all columns. Candidate thresholds are midpoints between
/// consecutive distinct values; ties go to the lower column, then the lower
/// threshold. For classification `targets` holds class ids.
DecisionTree grow_tree(const RowMatrix& x, std::span<const double> targets, std::span<const std::size_t> samples,
                       const TreeConfig& cfg, SplitMix64& rng, TreeMode mode,
                       const PresortedColumns* presorted = nullptr);

/// Lowest-index class with the largest count in a classification leaf.
int leaf_class(const DecisionTree& tree, int leaf);

}  // namespace cytoclass

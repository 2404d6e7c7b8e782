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
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cytoclass/hog.hpp"
#include "cytoclass/tree.hpp"

namespace cytoclass {

struct ForestConfig {
  int n_trees = 100;
  int max_features = 0;  // 0: floor(sqrt(p))
  int min_leaf = 1;
  int max_depth = 0;  // 0: fully grown
  bool bootstrap = true;
};

struct Forest {
  ForestConfig cfg;
  int n_features = 0;
  int max_features = 0;  // resolved value
  std::vector<DecisionTree> trees;
  std::vector<std::vector<std::uint8_t>> in_bag;  // per tree, per training row
};

/// n draws with replacement from [0, n).
std::vector<std::size_t> bootstrap_sample(std::size_t n, SplitMix64& rng);

/// Tree t uses stream splitmix64(seed ^ t) for its bootstrap draw and then
/// for its per-node feature subsets. Trees are grown in parallel.
Forest rf_fit(const FeatureMatrix& data, const ForestConfig& cfg, std::uint64_t seed);

/// Fraction of trees voting for each class.
Eigen::VectorXd rf_predict_scores(const Forest& forest, const Eigen::Ref<const Eigen::RowVectorXd>& x);

struct OobResult {
  std::optional<double> accuracy;  // empty when no row is out of bag anywhere
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  std::vector<int> oob_tree_counts;  // per row
};

OobResult rf_oob_accuracy(const Forest& forest, const FeatureMatrix& data);

struct BoostingConfig {
  int n_rounds = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_leaf = 5;
};

/// Multinomial-deviance gradient boosting, one regression tree per class per
/// round.
struct BoostedEnsemble {
  BoostingConfig cfg;
  int n_features = 0;
  Eigen::VectorXd base_scores;                  // log class priors
  std::vector<std::vector<DecisionTree>> rounds;  // rounds x classes
};

struct BoostingTrace {
  std::vector<double> deviance;  // mean deviance before round 1, then after every round
  RowMatrix final_scores;        // raw training scores after the last round
};

BoostedEnsemble gbm_fit(const FeatureMatrix& data, const BoostingConfig& cfg, BoostingTrace* trace = nullptr);

/// Raw additive class scores (before softmax).
Eigen::VectorXd gbm_raw_scores(const BoostedEnsemble& model, const Eigen::Ref<const Eigen::RowVectorXd>& x);
Eigen::VectorXd gbm_predict_scores(const BoostedEnsemble& model, const Eigen::Ref<const Eigen::RowVectorXd>& x);

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& scores);

}  // namespace cytoclass

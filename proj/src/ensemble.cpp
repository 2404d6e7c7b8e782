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

#include "cytoclass/ensemble.hpp"

#include <cmath>
#include <string>

#include "cytoclass/dataset.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/parallel.hpp"

namespace cytoclass {
namespace {

void check_width(int expected, Eigen::Index actual) {
  if (actual != expected) {
    throw Error(ErrorCode::kDimensionMismatch,
                "input has " + std::to_string(actual) + " features, model expects " + std::to_string(expected));
  }
}

std::vector<double> labels_as_targets(const FeatureMatrix& data) {
  std::vector<double> t(data.labels.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const int y = data.labels[i];
    if (y < 0 || y >= kNumClasses) throw Error(ErrorCode::kLabelOutOfRange, "label out of range");
    t[i] = y;
  }
  return t;
}

}  // namespace

std::vector<std::size_t> bootstrap_sample(std::size_t n, SplitMix64& rng) {
  std::vector<std::size_t> s(n);
  for (auto& v : s) v = static_cast<std::size_t>(rng.bounded(n));
  return s;
}

Forest rf_fit(const FeatureMatrix& data, const ForestConfig& cfg, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "random forest needs at least 2 rows");
  if (cfg.n_trees < 1) throw Error(ErrorCode::kInvalidConfig, "n_trees must be at least 1");
  const int p = static_cast<int>(data.cols());
  Forest forest;
  forest.cfg = cfg;
  forest.n_features = p;
  forest.max_features = cfg.max_features > 0 ? std::min(cfg.max_features, p)
                                             : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(p)))));
  const std::vector<double> targets = labels_as_targets(data);
  TreeConfig tree_cfg;
  tree_cfg.max_features = forest.max_features;
  tree_cfg.min_leaf = cfg.min_leaf;
  tree_cfg.max_depth = cfg.max_depth;
  tree_cfg.n_classes = kNumClasses;

  const auto n_trees = static_cast<std::size_t>(cfg.n_trees);
  forest.trees.resize(n_trees);
  forest.in_bag.assign(n_trees, std::vector<std::uint8_t>(n, 0));
  parallel_for(n_trees, [&](std::size_t t) {
    SplitMix64 rng(splitmix64(seed ^ static_cast<std::uint64_t>(t)));
    std::vector<std::size_t> samples;
    if (cfg.bootstrap) {
      samples = bootstrap_sample(n, rng);
    } else {
      samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) samples[i] = i;
    }
    for (const auto s : samples) forest.in_bag[t][s] = 1;
    forest.trees[t] = grow_tree(data.values, targets, samples, tree_cfg, rng, TreeMode::kClassify);
  });
  return forest;
}

Eigen::VectorXd rf_predict_scores(const Forest& forest, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  check_width(forest.n_features, x.size());
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(kNumClasses);
  for (const auto& tree : forest.trees) scores(leaf_class(tree, tree.leaf_index(x))) += 1.0;
  return scores / static_cast<double>(forest.trees.size());
}

OobResult rf_oob_accuracy(const Forest& forest, const FeatureMatrix& data) {
  check_width(forest.n_features, data.cols());
  const auto n = static_cast<std::size_t>(data.rows());
  OobResult result;
  result.oob_tree_counts.assign(n, 0);
  std::vector<int> prediction(n, -1);
  parallel_for(n, [&](std::size_t i) {
    Eigen::VectorXd votes = Eigen::VectorXd::Zero(kNumClasses);
    int count = 0;
    for (std::size_t t = 0; t < forest.trees.size(); ++t) {
      if (t < forest.in_bag.size() && i < forest.in_bag[t].size() && forest.in_bag[t][i]) continue;
      const auto& tree = forest.trees[t];
      votes(leaf_class(tree, tree.leaf_index(data.values.row(static_cast<Eigen::Index>(i))))) += 1.0;
      ++count;
    }
    result.oob_tree_counts[i] = count;
    if (count > 0) {
      int best = 0;
      for (int c = 1; c < kNumClasses; ++c) {
        if (votes(c) > votes(best)) best = c;
      }
      prediction[i] = best;
    }
  });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (prediction[i] < 0) {
      ++result.skipped;
      continue;
    }
    ++result.evaluated;
    if (prediction[i] == data.labels[i]) ++correct;
  }
  if (result.evaluated > 0) result.accuracy = static_cast<double>(correct) / static_cast<double>(result.evaluated);
  return result;
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& scores) {
  const double peak = scores.maxCoeff();
  Eigen::VectorXd e = (scores.array() - peak).exp().matrix();
  return e / e.sum();
}

BoostedEnsemble gbm_fit(const FeatureMatrix& data, const BoostingConfig& cfg, BoostingTrace* trace) {
  const auto n = static_cast<std::size_t>(data.rows());
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "gradient boosting needs at least 2 rows");
  if (!(cfg.learning_rate >= 0.0) || cfg.n_rounds < 0 || cfg.max_depth < 1 || cfg.min_leaf < 1) {
    throw Error(ErrorCode::kInvalidConfig, "invalid boosting configuration");
  }
  std::array<std::size_t, kNumClasses> counts{};
  for (const int y : data.labels) {
    if (y < 0 || y >= kNumClasses) throw Error(ErrorCode::kLabelOutOfRange, "label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw Error(ErrorCode::kMissingClass, "class " + std::to_string(c) + " has no training rows");
    }
  }

  BoostedEnsemble model;
  model.cfg = cfg;
  model.n_features = static_cast<int>(data.cols());
  model.base_scores.resize(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    model.base_scores(c) = std::log(static_cast<double>(counts[static_cast<std::size_t>(c)]) / static_cast<double>(n));
  }

  RowMatrix scores(static_cast<Eigen::Index>(n), kNumClasses);
  for (Eigen::Index i = 0; i < scores.rows(); ++i) scores.row(i) = model.base_scores.transpose();

  auto mean_deviance = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = scores.row(static_cast<Eigen::Index>(i));
      const double peak = row.maxCoeff();
      const double log_norm = peak + std::log((row.array() - peak).exp().sum());
      total += log_norm - row(data.labels[i]);
    }
    return total / static_cast<double>(n);
  };
  if (trace != nullptr) trace->deviance.push_back(mean_deviance());

  TreeConfig tree_cfg;
  tree_cfg.max_depth = cfg.max_depth;
  tree_cfg.min_leaf = cfg.min_leaf;
  const PresortedColumns presorted(data.values);
  std::vector<std::size_t> all_rows(n);
  for (std::size_t i = 0; i < n; ++i) all_rows[i] = i;
  SplitMix64 unused_rng(0);

  RowMatrix probs(static_cast<Eigen::Index>(n), kNumClasses);
  std::vector<double> residual(n);
  for (int round = 0; round < cfg.n_rounds; ++round) {
    for (Eigen::Index i = 0; i < probs.rows(); ++i) probs.row(i) = softmax(scores.row(i).transpose()).transpose();
    std::vector<DecisionTree> trees;
    trees.reserve(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        residual[i] = (data.labels[i] == c ? 1.0 : 0.0) - probs(static_cast<Eigen::Index>(i), c);
      }
      DecisionTree tree = grow_tree(data.values, residual, all_rows, tree_cfg, unused_rng, TreeMode::kRegress, &presorted);

      // Newton step on each leaf: sum r / sum |r| (1 - |r|).
      std::vector<int> leaf_of(n);
      Eigen::VectorXd numerator = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tree.nodes.size()));
      Eigen::VectorXd denominator = numerator;
      for (std::size_t i = 0; i < n; ++i) {
        const int leaf = tree.leaf_index(data.values.row(static_cast<Eigen::Index>(i)));
        leaf_of[i] = leaf;
        const double r = residual[i];
        numerator(leaf) += r;
        denominator(leaf) += std::abs(r) * (1.0 - std::abs(r));
      }
      for (Eigen::Index node = 0; node < numerator.size(); ++node) {
        if (!tree.nodes[static_cast<std::size_t>(node)].is_leaf()) continue;
        tree.leaf_values(node, 0) = denominator(node) < 1e-12 ? 0.0 : numerator(node) / denominator(node);
      }
      for (std::size_t i = 0; i < n; ++i) {
        scores(static_cast<Eigen::Index>(i), c) += cfg.learning_rate * tree.leaf_values(leaf_of[i], 0);
      }
      trees.push_back(std::move(tree));
    }
    model.rounds.push_back(std::move(trees));
    if (trace != nullptr) trace->deviance.push_back(mean_deviance());
  }
  if (trace != nullptr) trace->final_scores = scores;
  return model;
}

Eigen::VectorXd gbm_raw_scores(const BoostedEnsemble& model, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  check_width(model.n_features, x.size());
  Eigen::VectorXd s = model.base_scores;
  for (const auto& round : model.rounds) {
    for (std::size_t c = 0; c < round.size(); ++c) {
      s(static_cast<Eigen::Index>(c)) += model.cfg.learning_rate * round[c].leaf_value(x)(0);
    }
  }
  return s;
}

Eigen::VectorXd gbm_predict_scores(const BoostedEnsemble& model, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return softmax(gbm_raw_scores(model, x));
}

}  // namespace cytoclass

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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "cytoclass/classify.hpp"
#include "cytoclass/ensemble.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/parallel.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cytoclass {
namespace {

class ThreadGuard {
 public:
  ThreadGuard() : saved_(thread_count()) {}
  ~ThreadGuard() { set_thread_count(saved_); }

 private:
  int saved_;
};

std::vector<Eigen::RowVectorXd> probes(int n, int cols, SplitMix64& rng) {
  std::vector<Eigen::RowVectorXd> out;
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd x(cols);
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    out.push_back(x);
  }
  return out;
}

TEST(Bootstrap, UniqueFractionNearLimit) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SplitMix64 rng(seed);
    const auto draw = bootstrap_sample(1000, rng);
    ASSERT_EQ(draw.size(), 1000u);
    total += static_cast<double>(std::set<std::size_t>(draw.begin(), draw.end()).size()) / 1000.0;
  }
  const double mean = total / 100.0;
  EXPECT_GE(mean, 0.612);
  EXPECT_LE(mean, 0.652);
}

TEST(Forest, SingleTreeWithoutBootstrapIsPlainTree) {
  SplitMix64 rng(3);
  const FeatureMatrix data = testing::blob_features(10, 4, 5, 0.6, rng);
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.bootstrap = false;
  cfg.max_features = 4;
  const Forest f = rf_fit(data, cfg, 11);
  std::vector<std::size_t> rows(data.labels.size());
  std::iota(rows.begin(), rows.end(), 0);
  const std::vector<double> targets(data.labels.begin(), data.labels.end());
  TreeConfig tcfg;
  tcfg.max_features = 4;
  SplitMix64 tree_rng(splitmix64(11 ^ 0));
  const DecisionTree plain = grow_tree(data.values, targets, rows, tcfg, tree_rng, TreeMode::kClassify);
  ASSERT_EQ(f.trees[0].nodes.size(), plain.nodes.size());
  for (const auto& x : probes(50, 4, rng)) {
    EXPECT_EQ(f.trees[0].leaf_index(x), plain.leaf_index(x));
  }
  const OobResult oob = rf_oob_accuracy(f, data);
  EXPECT_FALSE(oob.accuracy.has_value());
  EXPECT_EQ(oob.evaluated, 0u);
  EXPECT_EQ(oob.skipped, data.labels.size());
}

TEST(Forest, VotesMatchIndependentTreeWalk) {
  SplitMix64 rng(8);
  const FeatureMatrix data = testing::blob_features(20, 6, 5, 1.0, rng);
  ForestConfig cfg;
  cfg.n_trees = 15;
  const Forest f = rf_fit(data, cfg, 4);
  EXPECT_EQ(f.max_features, 2);
  for (const auto& x : probes(50, 6, rng)) {
    Eigen::VectorXd votes = Eigen::VectorXd::Zero(5);
    for (const auto& t : f.trees) votes(leaf_class(t, testing::walk_tree(t, x))) += 1.0;
    const Eigen::VectorXd s = rf_predict_scores(f, x);
    EXPECT_EQ(s, votes / 15.0);
    EXPECT_NEAR(s.sum(), 1.0, 1e-12);
  }
  EXPECT_THROW(rf_predict_scores(f, Eigen::RowVectorXd::Zero(5)), Error);
}

TEST(Forest, DeterministicAcrossRunsAndThreads) {
  ThreadGuard guard;
  SplitMix64 rng(12);
  const FeatureMatrix data = testing::blob_features(15, 5, 5, 1.2, rng);
  ForestConfig cfg;
  cfg.n_trees = 12;
  set_thread_count(1);
  const Forest a = rf_fit(data, cfg, 99);
  set_thread_count(4);
  const Forest b = rf_fit(data, cfg, 99);
  EXPECT_EQ(a.in_bag, b.in_bag);
  for (const auto& x : probes(100, 5, rng)) EXPECT_EQ(rf_predict_scores(a, x), rf_predict_scores(b, x));
}

TEST(Forest, OutOfBagCounts) {
  SplitMix64 rng(6);
  const FeatureMatrix all = testing::blob_features(90, 4, 5, 0.4, rng);
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t r = 0; r < all.labels.size(); ++r) (r % 90 < 60 ? train_rows : test_rows).push_back(r);
  const FeatureMatrix data = all.subset(train_rows);
  const FeatureMatrix test = all.subset(test_rows);
  ForestConfig cfg;
  cfg.n_trees = 200;
  const Forest f = rf_fit(data, cfg, 1);
  const OobResult oob = rf_oob_accuracy(f, data);
  ASSERT_TRUE(oob.accuracy.has_value());
  EXPECT_EQ(oob.evaluated + oob.skipped, data.labels.size());
  // Each row is out of bag for Binomial(200, ~0.368) trees.
  const double p = std::pow(1.0 - 1.0 / 200.0, 200.0);
  const double mean = 200.0 * p, sigma = std::sqrt(200.0 * p * (1.0 - p));
  double total = 0.0;
  for (const int c : oob.oob_tree_counts) {
    EXPECT_GT(c, mean - 4.0 * sigma);
    EXPECT_LT(c, mean + 4.0 * sigma);
    total += c;
  }
  EXPECT_NEAR(total / static_cast<double>(oob.oob_tree_counts.size()), mean, 3.0 * sigma / std::sqrt(200.0));
  int correct = 0;
  for (Eigen::Index r = 0; r < test.rows(); ++r) {
    correct += argmax(rf_predict_scores(f, test.values.row(r))) == test.labels[static_cast<std::size_t>(r)];
  }
  const double held_out = static_cast<double>(correct) / static_cast<double>(test.rows());
  EXPECT_NEAR(*oob.accuracy, held_out, 0.10);
}

TEST(Forest, UnanimousVote) {
  FeatureMatrix data;
  data.values = RowMatrix::Zero(4, 1);
  data.values << 0, 1, 2, 3;
  data.labels = {3, 3, 3, 3};
  ForestConfig cfg;
  cfg.n_trees = 5;
  const Forest f = rf_fit(data, cfg, 2);
  Eigen::VectorXd want = Eigen::VectorXd::Zero(5);
  want(3) = 1.0;
  EXPECT_EQ(rf_predict_scores(f, Eigen::RowVectorXd::Constant(1, 1.5)), want);
}

TEST(Boosting, ZeroRoundsGivePriors) {
  SplitMix64 rng(2);
  FeatureMatrix data = testing::blob_features(4, 3, 5, 1.0, rng);
  data.labels[1] = 2;  // class counts 3, 4, 5, 4, 4
  BoostingConfig cfg;
  cfg.n_rounds = 0;
  const BoostedEnsemble m = gbm_fit(data, cfg);
  EXPECT_TRUE(m.rounds.empty());
  const std::vector<double> prior = {3.0 / 20, 4.0 / 20, 5.0 / 20, 4.0 / 20, 4.0 / 20};
  for (const auto& x : probes(20, 3, rng)) {
    const Eigen::VectorXd s = gbm_predict_scores(m, x);
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(s(c), prior[static_cast<std::size_t>(c)], 1e-12);
  }
}

TEST(Boosting, ZeroLearningRateIsNoOp) {
  SplitMix64 rng(2);
  const FeatureMatrix data = testing::blob_features(6, 3, 5, 1.0, rng);
  BoostingConfig cfg;
  cfg.n_rounds = 5;
  cfg.learning_rate = 0.0;
  cfg.min_leaf = 1;
  const BoostedEnsemble m = gbm_fit(data, cfg);
  EXPECT_EQ(m.rounds.size(), 5u);
  for (const auto& x : probes(20, 3, rng)) {
    EXPECT_NEAR((gbm_predict_scores(m, x) - Eigen::VectorXd::Constant(5, 0.2)).cwiseAbs().maxCoeff(), 0.0, 1e-15);
  }
}

TEST(Boosting, DevianceFallsAndScoresMatchTrainingLoop) {
  SplitMix64 rng(31);
  const FeatureMatrix data = testing::blob_features(20, 5, 5, 0.7, rng);
  BoostingConfig cfg;
  cfg.n_rounds = 10;
  BoostingTrace trace;
  const BoostedEnsemble m = gbm_fit(data, cfg, &trace);
  ASSERT_EQ(trace.deviance.size(), 11u);
  EXPECT_LT(trace.deviance.back(), trace.deviance.front());
  for (std::size_t r = 1; r < trace.deviance.size(); ++r) EXPECT_LE(trace.deviance[r], trace.deviance[r - 1] + 1e-12);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const Eigen::VectorXd raw = gbm_raw_scores(m, data.values.row(r));
    EXPECT_LT((raw.transpose() - trace.final_scores.row(r)).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Boosting, ScoresMatchIndependentRewalk) {
  SplitMix64 rng(41);
  const FeatureMatrix data = testing::blob_features(10, 4, 5, 1.0, rng);
  BoostingConfig cfg;
  cfg.n_rounds = 8;
  const BoostedEnsemble m = gbm_fit(data, cfg);
  for (const auto& x : probes(50, 4, rng)) {
    Eigen::VectorXd raw = m.base_scores;
    for (const auto& round : m.rounds) {
      for (int c = 0; c < 5; ++c) {
        const auto& t = round[static_cast<std::size_t>(c)];
        raw(c) += cfg.learning_rate * t.leaf_values(testing::walk_tree(t, x), 0);
      }
    }
    EXPECT_LT((gbm_raw_scores(m, x) - raw).cwiseAbs().maxCoeff(), 1e-12);
    const Eigen::VectorXd s = gbm_predict_scores(m, x);
    EXPECT_NEAR(s.sum(), 1.0, 1e-9);
    EXPECT_LT((softmax(raw.array() + 3.0) - s).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Boosting, MissingClassRejected) {
  SplitMix64 rng(2);
  FeatureMatrix data = testing::blob_features(3, 2, 5, 1.0, rng);
  for (auto& y : data.labels) {
    if (y == 4) y = 0;
  }
  try {
    gbm_fit(data, BoostingConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingClass);
  }
}

TEST(Boosting, SeparableBlobsAreLearned) {
  SplitMix64 rng(52);
  const FeatureMatrix data = testing::blob_features(20, 4, 5, 0.2, rng);
  const BoostedEnsemble m = gbm_fit(data, BoostingConfig{});
  int correct = 0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    correct += argmax(gbm_predict_scores(m, data.values.row(r))) == data.labels[static_cast<std::size_t>(r)];
  }
  EXPECT_EQ(correct, data.rows());
}

}  // namespace
}  // namespace cytoclass

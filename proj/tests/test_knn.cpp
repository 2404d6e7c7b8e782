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

#include "cytoclass/classify.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/knn.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cytoclass {
namespace {

TEST(KnnScores, MajorityCounts) {
  const std::vector<Neighbor> nb = {{0, 0.1}, {1, 0.2}, {2, 0.3}};
  const Eigen::VectorXd s = knn_scores_from_neighbors(nb, {2, 2, 4}, KnnWeighting::kMajority, 5);
  EXPECT_DOUBLE_EQ(s(2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s(4), 1.0 / 3.0);
  EXPECT_EQ(s(0) + s(1) + s(3), 0.0);
}

TEST(KnnScores, InverseDistanceHandComputed) {
  // Weights 1 and 1/3 normalize to 3/4 and 1/4.
  const std::vector<Neighbor> nb = {{0, 1.0}, {1, 3.0}};
  const Eigen::VectorXd s = knn_scores_from_neighbors(nb, {0, 1}, KnnWeighting::kInverseDistance, 5);
  EXPECT_NEAR(s(0), 0.75, 1e-9);
  EXPECT_NEAR(s(1), 0.25, 1e-9);
  EXPECT_NEAR(s.sum(), 1.0, 1e-12);
}

TEST(KnnScores, SelfNeighborIsOneHot) {
  SplitMix64 rng(3);
  KnnModel m;
  m.train = testing::blob_features(6, 4, 5, 0.5, rng);
  m.k = 1;
  for (Eigen::Index r = 0; r < m.train.rows(); ++r) {
    const Eigen::VectorXd s = knn_predict_scores(m, m.train.values.row(r));
    EXPECT_EQ(s(m.train.labels[static_cast<std::size_t>(r)]), 1.0);
    EXPECT_EQ(s.sum(), 1.0);
  }
}

TEST(KnnNeighbors, MatchExhaustiveScan) {
  SplitMix64 rng(17);
  const FeatureMatrix train = testing::blob_features(40, 12, 5, 2.0, rng);
  for (int q = 0; q < 200; ++q) {
    Eigen::RowVectorXd x(12);
    for (auto& v : x) v = rng.uniform(-3.0, 3.0);
    // Some queries duplicate a training row to exercise distance ties.
    if (q % 10 == 0) x = train.values.row(static_cast<Eigen::Index>(rng.bounded(200)));
    const std::size_t k = 1 + rng.bounded(15);
    EXPECT_EQ(nearest_neighbors(train.values, x, k), testing::exhaustive_neighbors(train.values, x, k)) << q;
  }
}

TEST(KnnNeighbors, DistanceTiesGoToLowerRow) {
  RowMatrix train(4, 1);
  train << 1.0, -1.0, 1.0, 2.0;
  Eigen::RowVectorXd x(1);
  x << 0.0;
  const auto nb = nearest_neighbors(train, x, 3);
  ASSERT_EQ(nb.size(), 3u);
  EXPECT_EQ(nb[0].index, 0u);
  EXPECT_EQ(nb[1].index, 1u);
  EXPECT_EQ(nb[2].index, 2u);
}

TEST(KnnPredict, ScoresAreDistribution) {
  SplitMix64 rng(8);
  KnnModel m;
  m.train = testing::blob_features(10, 6, 5, 1.5, rng);
  for (const auto w : {KnnWeighting::kMajority, KnnWeighting::kInverseDistance}) {
    m.weighting = w;
    m.k = 7;
    for (int q = 0; q < 50; ++q) {
      Eigen::RowVectorXd x(6);
      for (auto& v : x) v = rng.uniform(-2.0, 2.0);
      const Eigen::VectorXd s = knn_predict_scores(m, x);
      EXPECT_NEAR(s.sum(), 1.0, 1e-9);
      EXPECT_GE(s.minCoeff(), 0.0);
    }
  }
}

TEST(KnnPredict, ZeroPaddingColumnIsInvisible) {
  SplitMix64 rng(21);
  KnnModel a;
  a.train = testing::blob_features(8, 5, 5, 2.0, rng);
  a.k = 5;
  KnnModel b = a;
  b.train.values.conservativeResize(Eigen::NoChange, 6);
  b.train.values.col(5) = a.train.values.col(0) * 0.0;
  for (int q = 0; q < 50; ++q) {
    Eigen::RowVectorXd x(5);
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    Eigen::RowVectorXd xp(6);
    xp << x, 0.0;
    EXPECT_EQ(knn_predict_scores(a, x), knn_predict_scores(b, xp));
  }
}

TEST(KnnPredict, TrainingAccuracyWithOneNeighbor) {
  SplitMix64 rng(4);
  KnnModel m;
  m.train = testing::blob_features(12, 3, 5, 3.0, rng);
  m.k = 1;
  for (Eigen::Index r = 0; r < m.train.rows(); ++r) {
    EXPECT_EQ(argmax(knn_predict_scores(m, m.train.values.row(r))), m.train.labels[static_cast<std::size_t>(r)]);
  }
}

TEST(KnnPredict, Errors) {
  SplitMix64 rng(4);
  KnnModel m;
  m.train = testing::blob_features(2, 3, 5, 1.0, rng);
  m.k = 3;
  EXPECT_THROW(knn_predict_scores(m, Eigen::RowVectorXd::Zero(4)), Error);
  m.k = 0;
  EXPECT_THROW(m.validate(), Error);
  m.k = 11;
  EXPECT_THROW(m.validate(), Error);
}

TEST(SelectK, Rules) {
  SplitMix64 rng(9);
  const FeatureMatrix all = testing::blob_features(14, 4, 5, 0.05, rng);
  std::vector<std::size_t> train_rows, val_rows;
  for (std::size_t r = 0; r < all.labels.size(); ++r) (r % 14 < 10 ? train_rows : val_rows).push_back(r);
  const FeatureMatrix train = all.subset(train_rows);
  const FeatureMatrix val = all.subset(val_rows);
  EXPECT_EQ(select_k(train, val, {5}), 5);
  // Tight blobs: every small k is perfect, so the smallest wins.
  EXPECT_EQ(select_k(train, val, {7, 3, 5}), 3);
  EXPECT_EQ(select_k(train, val, default_k_candidates()), 1);
  FeatureMatrix empty;
  empty.values.resize(0, 4);
  try {
    select_k(train, empty, {1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyValidation);
  }
}

}  // namespace
}  // namespace cytoclass

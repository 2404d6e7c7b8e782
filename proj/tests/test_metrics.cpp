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

#include "cytoclass/error.hpp"
#include "cytoclass/metrics.hpp"
#include "oracles.hpp"

namespace cytoclass {
namespace {

RocCurve binary_curve(std::initializer_list<bool> labels, std::vector<double> scores) {
  const std::vector<char> stored(labels.begin(), labels.end());
  auto flags = std::make_unique<bool[]>(stored.size());
  for (std::size_t i = 0; i < stored.size(); ++i) flags[i] = stored[i] != 0;
  return roc_curve_binary({flags.get(), stored.size()}, scores);
}

TEST(Confusion, Counts) {
  const std::vector<int> t = {0, 1, 2, 3, 4, 4, 0};
  const std::vector<int> p = {0, 1, 2, 3, 4, 0, 0};
  const ConfusionMatrix cm = confusion_matrix(t, p);
  EXPECT_EQ(cm.counts(4, 0), 1);
  EXPECT_EQ(cm.counts(0, 0), 2);
  EXPECT_EQ(cm.total(), 7);
  EXPECT_EQ(cm.counts.row(4).sum(), 2);
  EXPECT_DOUBLE_EQ(accuracy(cm), 6.0 / 7.0);
  const auto recall = per_class_recall(cm);
  EXPECT_EQ(*recall[4], 0.5);
  EXPECT_EQ(*recall[0], 1.0);
}

TEST(Confusion, TotalConfusion) {
  const std::vector<int> t = {0, 1}, p = {1, 0};
  const ConfusionMatrix cm = confusion_matrix(t, p);
  EXPECT_EQ(cm.counts(0, 1), 1);
  EXPECT_EQ(cm.counts(1, 0), 1);
  EXPECT_EQ(accuracy(cm), 0.0);
}

TEST(Confusion, DiagonalAndArithmetic) {
  ConfusionMatrix cm{Eigen::MatrixXi::Identity(5, 5) * 2};
  EXPECT_EQ(accuracy(cm), 1.0);
  for (const auto& r : per_class_recall(cm)) EXPECT_EQ(*r, 1.0);
  cm.counts.setZero();
  cm.counts(0, 0) = 93;
  cm.counts(0, 1) = 7;
  EXPECT_DOUBLE_EQ(accuracy(cm), 0.93);
  const auto recall = per_class_recall(cm);
  EXPECT_FALSE(recall[3].has_value());
  EXPECT_EQ(cm.normalized().row(3).sum(), 0.0);
  EXPECT_DOUBLE_EQ(cm.normalized()(0, 1), 0.07);
}

TEST(Confusion, Errors) {
  const std::vector<int> a = {0, 1}, b = {0}, bad = {0, 5};
  EXPECT_THROW(confusion_matrix(a, b), Error);
  try {
    confusion_matrix(a, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kLabelOutOfRange);
  }
  try {
    accuracy(ConfusionMatrix{Eigen::MatrixXi::Zero(5, 5)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyMatrix);
  }
}

TEST(Roc, PerfectSeparation) {
  const RocCurve c = binary_curve({true, true, false, false}, {0.9, 0.8, 0.2, 0.1});
  ASSERT_GE(c.points.size(), 3u);
  EXPECT_EQ(c.points[0], std::make_pair(0.0, 0.0));
  EXPECT_EQ(c.points[1], std::make_pair(0.0, 0.5));
  EXPECT_EQ(c.points[2], std::make_pair(0.0, 1.0));
  EXPECT_EQ(c.points.back(), std::make_pair(1.0, 1.0));
  EXPECT_EQ(c.auc, 1.0);
}

TEST(Roc, AllTiedIsOneStep) {
  const RocCurve c = binary_curve({true, false, true, false}, {0.3, 0.3, 0.3, 0.3});
  ASSERT_EQ(c.points.size(), 2u);
  EXPECT_EQ(c.auc, 0.5);
}

TEST(Roc, HandCountedPairs) {
  const RocCurve c = binary_curve({true, true, false, false}, {0.9, 0.4, 0.5, 0.1});
  EXPECT_DOUBLE_EQ(c.auc, 0.75);
  bool flags[] = {true, true, false, false};
  const std::vector<double> s = {0.9, 0.4, 0.5, 0.1};
  EXPECT_DOUBLE_EQ(auc_paircount_oracle(flags, s), 0.75);
  const std::vector<double> same(4, 1.0);
  EXPECT_EQ(auc_paircount_oracle(flags, same), 0.5);
}

TEST(Roc, OneVsRestUsesClassColumn) {
  const std::vector<int> y = {0, 1, 2, 1};
  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(4, 5);
  scores.col(1) << 0.1, 0.9, 0.2, 0.8;
  EXPECT_EQ(roc_curve_ovr(y, scores, 1).auc, 1.0);
  try {
    roc_curve_ovr(y, scores, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateClass);
  }
}

TEST(Roc, TrapezoidMatchesPairCounting) {
  SplitMix64 rng(2718);
  for (int trial = 0; trial < 1000; ++trial) {
    const testing::AucCase c = testing::random_auc_case(rng);
    const RocCurve curve = roc_curve_binary(c.positive(), c.scores);
    ASSERT_LE(std::abs(curve.auc - auc_paircount_oracle(c.positive(), c.scores)), 1e-9) << trial;
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      ASSERT_GE(curve.points[i].first, curve.points[i - 1].first);
      ASSERT_GE(curve.points[i].second, curve.points[i - 1].second);
      ASSERT_LE(curve.points[i].first, 1.0);
      ASSERT_LE(curve.points[i].second, 1.0);
    }
  }
}

TEST(Roc, MonotoneTransformInvariance) {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const testing::AucCase c = testing::random_auc_case(rng);
    std::vector<double> warped;
    for (const double s : c.scores) warped.push_back(std::exp(3.0 * s) - 7.0);
    EXPECT_NEAR(roc_curve_binary(c.positive(), c.scores).auc, roc_curve_binary(c.positive(), warped).auc, 1e-12);
  }
}

}  // namespace
}  // namespace cytoclass

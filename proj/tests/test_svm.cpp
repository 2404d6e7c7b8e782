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

#include "cytoclass/classify.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/svm.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace cytoclass {
namespace {

Eigen::VectorXd full_alphas(const BinarySvm& m, Eigen::Index n) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  for (std::size_t s = 0; s < m.support_indices.size(); ++s) {
    a(m.support_indices[s]) = m.alphas(static_cast<Eigen::Index>(s));
  }
  return a;
}

// Two separated Gaussian clouds labelled +1 / -1.
void two_clouds(int per_side, int cols, double gap, SplitMix64& rng, RowMatrix& x, std::vector<int>& y) {
  x.resize(2 * per_side, cols);
  y.clear();
  for (int r = 0; r < 2 * per_side; ++r) {
    const int label = r < per_side ? 1 : -1;
    for (int c = 0; c < cols; ++c) x(r, c) = rng.normal() * 0.5 + (c == 0 ? label * gap : 0.0);
    y.push_back(label);
  }
}

TEST(Smo, TwoPointAnalyticSolution) {
  RowMatrix x(2, 1);
  x << -1.0, 1.0;
  SmoConfig cfg;
  cfg.C = 10.0;
  const BinarySvm m = smo_train_binary(x, {-1, 1}, Kernel{KernelType::kLinear, 0.0}, cfg);
  EXPECT_NEAR(svm_decision_value(m, Eigen::RowVectorXd::Zero(1)), 0.0, 1e-6);
  EXPECT_NEAR(-svm_decision_value(m, x.row(0)), 1.0, 1e-3);
  EXPECT_NEAR(svm_decision_value(m, x.row(1)), 1.0, 1e-3);
  EXPECT_TRUE(m.converged);
}

TEST(Smo, DualFeasibility) {
  SplitMix64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    RowMatrix x;
    std::vector<int> y;
    two_clouds(15, 3, 0.3 * trial, rng, x, y);
    SmoConfig cfg;
    cfg.C = 0.5 + trial;
    cfg.seed = static_cast<std::uint64_t>(trial);
    const BinarySvm m = smo_train_binary(x, y, Kernel{}, cfg);
    EXPECT_LE(std::abs(m.alphas.dot(m.labels)), 1e-8);
    EXPECT_GE(m.alphas.minCoeff(), 0.0);
    EXPECT_LE(m.alphas.maxCoeff(), cfg.C);
    EXPECT_EQ(m.support_indices.size(), static_cast<std::size_t>(m.alphas.size()));
    if (m.converged) {
      EXPECT_LE(m.max_kkt_violation, cfg.tol);
    }
  }
}

TEST(Smo, ObjectiveNeverDecreases) {
  SplitMix64 rng(4);
  RowMatrix x;
  std::vector<int> y;
  two_clouds(25, 4, 0.5, rng, x, y);
  SmoConfig cfg;
  cfg.record_objective = true;
  const BinarySvm m = smo_train_binary(x, y, Kernel{}, cfg);
  ASSERT_GT(m.objective_trace.size(), 5u);
  for (std::size_t i = 1; i < m.objective_trace.size(); ++i) {
    EXPECT_GE(m.objective_trace[i], m.objective_trace[i - 1]) << i;
  }
  const Eigen::MatrixXd gram = kernel_matrix(x, m.kernel);
  EXPECT_NEAR(svm_dual_objective(full_alphas(m, x.rows()), y, gram), m.dual_objective, 1e-9);
}

TEST(Smo, MatchesGridSearchOnTinyProblems) {
  SplitMix64 rng(100);
  for (int trial = 0; trial < 12; ++trial) {
    const int n = 3 + trial % 4;
    RowMatrix x(n, 2);
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
      x(r, 0) = rng.uniform(-1.0, 1.0);
      x(r, 1) = rng.uniform(-1.0, 1.0);
      y[static_cast<std::size_t>(r)] = r == 0 ? 1 : (r == 1 ? -1 : (rng.bernoulli(0.5) ? 1 : -1));
    }
    const Kernel kernel = trial % 2 == 0 ? Kernel{KernelType::kRbf, 0.8} : Kernel{KernelType::kLinear, 0.0};
    SmoConfig cfg;
    cfg.C = trial % 3 == 0 ? 0.5 : 2.0;
    const BinarySvm m = smo_train_binary(x, y, kernel, cfg);
    const Eigen::MatrixXd gram = kernel_matrix(x, kernel);
    const double smo = svm_dual_objective(full_alphas(m, n), y, gram);
    const double grid = testing::grid_dual_optimum(gram, y, cfg.C);
    EXPECT_NEAR(smo, grid, 1e-3) << "trial " << trial;
  }
}

TEST(Smo, DuplicatedPointsKeepDecisionFunction) {
  SplitMix64 rng(7);
  RowMatrix x;
  std::vector<int> y;
  two_clouds(5, 2, 2.0, rng, x, y);
  SmoConfig cfg;
  cfg.C = 100.0;
  cfg.tol = 1e-8;
  cfg.min_step = 1e-14;
  const Kernel kernel{KernelType::kLinear, 0.0};
  const BinarySvm once = smo_train_binary(x, y, kernel, cfg);
  RowMatrix xx(20, 2);
  xx << x, x;
  std::vector<int> yy = y;
  yy.insert(yy.end(), y.begin(), y.end());
  const BinarySvm twice = smo_train_binary(xx, yy, kernel, cfg);
  ASSERT_TRUE(once.converged);
  ASSERT_TRUE(twice.converged);
  for (int q = 0; q < 20; ++q) {
    const Eigen::RowVectorXd p = Eigen::RowVectorXd::Random(2) * 3.0;
    EXPECT_NEAR(svm_decision_value(once, p), svm_decision_value(twice, p), 1e-6);
  }
}

TEST(Smo, Errors) {
  RowMatrix x(3, 1);
  x << 0, 1, 2;
  try {
    smo_train_binary(x, {1, 1, 1}, Kernel{}, SmoConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingleClassInput);
  }
  SmoConfig bad;
  bad.C = 0.0;
  EXPECT_THROW(smo_train_binary(x, {1, -1, 1}, Kernel{}, bad), Error);
}

TEST(Decision, EmptySupportGivesBias) {
  BinarySvm m;
  m.support_vectors.resize(0, 3);
  m.bias = -0.25;
  EXPECT_EQ(svm_decision_value(m, Eigen::RowVectorXd::Ones(3)), -0.25);
  EXPECT_THROW(svm_decision_value(m, Eigen::RowVectorXd::Ones(2)), Error);
}

TEST(Decision, LinearKernelIsAffine) {
  SplitMix64 rng(9);
  RowMatrix x;
  std::vector<int> y;
  two_clouds(12, 3, 0.6, rng, x, y);
  const BinarySvm m = smo_train_binary(x, y, Kernel{KernelType::kLinear, 0.0}, SmoConfig{});
  Eigen::RowVectorXd w = Eigen::RowVectorXd::Zero(3);
  for (Eigen::Index s = 0; s < m.alphas.size(); ++s) w += m.alphas(s) * m.labels(s) * m.support_vectors.row(s);
  for (int q = 0; q < 20; ++q) {
    const Eigen::RowVectorXd p = Eigen::RowVectorXd::Random(3);
    EXPECT_NEAR(svm_decision_value(m, p), w.dot(p) + m.bias, 1e-9);
  }
}

TEST(Decision, RbfSelfSimilarityIsOne) {
  const Kernel k{KernelType::kRbf, 3.7};
  SplitMix64 rng(2);
  for (int i = 0; i < 10; ++i) {
    const Eigen::RowVectorXd a = Eigen::RowVectorXd::Random(5) * 10.0;
    EXPECT_EQ(k(a, a), 1.0);
  }
}

TEST(Ovr, RowOrderInvariance) {
  SplitMix64 rng(13);
  const FeatureMatrix data = testing::blob_features(8, 4, 5, 0.4, rng);
  std::vector<std::size_t> order(data.labels.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle(order, rng);
  SmoConfig cfg;
  cfg.tol = 1e-8;
  cfg.min_step = 1e-14;
  const MultiSvm a = ovr_fit(data, Kernel{}, cfg);
  const MultiSvm b = ovr_fit(data.subset(order), Kernel{}, cfg);
  for (int q = 0; q < 20; ++q) {
    const Eigen::RowVectorXd p = Eigen::RowVectorXd::Random(4);
    EXPECT_LT((ovr_predict_scores(a, p) - ovr_predict_scores(b, p)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Ovr, SeparableBlobsHaveOneHotSigns) {
  SplitMix64 rng(14);
  const FeatureMatrix data = testing::blob_features(10, 6, 5, 0.05, rng);
  const MultiSvm m = ovr_fit(data, Kernel{KernelType::kLinear, 0.0}, SmoConfig{});
  ASSERT_EQ(m.machines.size(), 5u);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const Eigen::VectorXd s = ovr_predict_scores(m, data.values.row(r));
    const int label = data.labels[static_cast<std::size_t>(r)];
    EXPECT_EQ(argmax(s), label);
    for (int c = 0; c < 5; ++c) {
      if (c == label) {
        EXPECT_GT(s(c), 0.0);
      } else {
        EXPECT_LT(s(c), 0.0);
      }
    }
  }
}

TEST(Ovr, MissingClassRejected) {
  SplitMix64 rng(1);
  FeatureMatrix data = testing::blob_features(3, 2, 5, 1.0, rng);
  for (auto& y : data.labels) {
    if (y == 2) y = 1;
  }
  try {
    ovr_fit(data, Kernel{}, SmoConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingClass);
  }
}

}  // namespace
}  // namespace cytoclass

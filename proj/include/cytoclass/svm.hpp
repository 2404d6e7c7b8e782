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
#include <vector>

#include <Eigen/Dense>

#include "cytoclass/hog.hpp"

namespace cytoclass {

enum class KernelType { kLinear, kRbf };

struct Kernel {
  KernelType type = KernelType::kRbf;
  double gamma = 0.0;  // rbf only; 0 means 1 / n_features at training time

  double operator()(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) const;
};

/// Full kernel matrix of the rows of x.
Eigen::MatrixXd kernel_matrix(const RowMatrix& x, const Kernel& kernel);

struct SmoConfig {
  double C = 1.0;
  double tol = 1e-3;
  int max_passes = 5;        // consecutive sweeps without an update before stopping
  int max_sweeps = 20'000;   // hard budget; exhausting it flags the model non-converged
  double min_step = 1e-8;    // smaller alpha changes are not applied
  std::uint64_t seed = 0;    // second-index selection stream
  bool record_objective = false;
};

struct BinarySvm {
  RowMatrix support_vectors;
  Eigen::VectorXd alphas;  // per support vector
  Eigen::VectorXd labels;  // +1 / -1 per support vector
  std::vector<std::int64_t> support_indices;  // training row of each support vector
  double bias = 0.0;
  Kernel kernel;
  double C = 1.0;
  bool converged = false;
  double max_kkt_violation = 0.0;
  double dual_objective = 0.0;
  int sweeps = 0;
  std::vector<double> objective_trace;  // after every accepted pair update, when recorded
};

/// Simplified SMO: each KKT-violating alpha is paired with a uniformly drawn
/// partner (falling back to the other partners in turn when that pair cannot
/// move) and the pair is optimized analytically. `gram` may supply the
/// precomputed kernel matrix of x.
BinarySvm smo_train_binary(const RowMatrix& x, const std::vector<int>& y, Kernel kernel, const SmoConfig& cfg,
                           const Eigen::MatrixXd* gram = nullptr);

/// sum alpha_i y_i K(sv_i, x) + b.
double svm_decision_value(const BinarySvm& m, const Eigen::Ref<const Eigen::RowVectorXd>& x);

/// sum alpha - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij.
double svm_dual_objective(const Eigen::VectorXd& alphas, const std::vector<int>& y, const Eigen::MatrixXd& gram);

/// One class-vs-rest machine per class.
struct MultiSvm {
  std::vector<BinarySvm> machines;
};

MultiSvm ovr_fit(const FeatureMatrix& data, const Kernel& kernel, const SmoConfig& cfg);

/// Raw decision values, one per class.
Eigen::VectorXd ovr_predict_scores(const MultiSvm& m, const Eigen::Ref<const Eigen::RowVectorXd>& x);

}  // namespace cytoclass

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

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace cytoclass {

/// counts(t, p): examples of true class t predicted as p.
struct ConfusionMatrix {
  Eigen::MatrixXi counts;

  int n_classes() const { return static_cast<int>(counts.rows()); }
  long total() const { return counts.cast<long>().sum(); }
  /// Row-normalized copy; rows with zero support stay zero.
  Eigen::MatrixXd normalized() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, int n_classes = 5);

double accuracy(const ConfusionMatrix& cm);

/// Recall per class; empty for classes without support.
std::vector<std::optional<double>> per_class_recall(const ConfusionMatrix& cm);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr) from (0,0) to (1,1)
  double auc = 0.0;
};

/// Class-vs-rest ROC from per-example score rows. One point per distinct
/// score, so tied scores advance both rates together; AUC by trapezoids.
RocCurve roc_curve_ovr(std::span<const int> y_true, const Eigen::Ref<const Eigen::MatrixXd>& scores, int class_id);

/// Same curve from a binary labelling and one score per example.
RocCurve roc_curve_binary(std::span<const bool> positive, std::span<const double> scores);

/// Mann-Whitney pair count: (#pos > neg + 0.5 #ties) / (n_pos n_neg).
double auc_paircount_oracle(std::span<const bool> positive, std::span<const double> scores);

}  // namespace cytoclass

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

#include "cytoclass/metrics.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <string>

#include "cytoclass/error.hpp"

namespace cytoclass {

Eigen::MatrixXd ConfusionMatrix::normalized() const {
  Eigen::MatrixXd out = counts.cast<double>();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double support = out.row(r).sum();
    if (support > 0) out.row(r) /= support;
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred, int n_classes) {
  if (y_true.size() != y_pred.size()) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(y_true.size()) + " labels vs " +
                                                std::to_string(y_pred.size()) + " predictions");
  }
  ConfusionMatrix cm{Eigen::MatrixXi::Zero(n_classes, n_classes)};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes) {
      throw Error(ErrorCode::kLabelOutOfRange, "label outside [0, " + std::to_string(n_classes) + ")");
    }
    ++cm.counts(t, p);
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total == 0) throw Error(ErrorCode::kEmptyMatrix, "accuracy of an empty confusion matrix");
  return static_cast<double>(cm.counts.trace()) / static_cast<double>(total);
}

std::vector<std::optional<double>> per_class_recall(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error(ErrorCode::kEmptyMatrix, "recall of an empty confusion matrix");
  std::vector<std::optional<double>> recall(static_cast<std::size_t>(cm.n_classes()));
  for (int c = 0; c < cm.n_classes(); ++c) {
    const long support = cm.counts.row(c).cast<long>().sum();
    if (support > 0) recall[static_cast<std::size_t>(c)] = static_cast<double>(cm.counts(c, c)) / static_cast<double>(support);
  }
  return recall;
}

RocCurve roc_curve_binary(std::span<const bool> positive, std::span<const double> scores) {
  if (positive.size() != scores.size()) throw Error(ErrorCode::kLengthMismatch, "labels and scores differ in length");
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t n_neg = positive.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::kDegenerateClass, "ROC needs positives and negatives");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  double auc2 = 0.0;  // twice the trapezoid area, in units of (fp, tp) counts
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    const std::size_t tp_before = tp, fp_before = fp;
    while (k < order.size() && scores[order[k]] == s) {
      (positive[order[k]] ? tp : fp) += 1;
      ++k;
    }
    auc2 += static_cast<double>(fp - fp_before) * static_cast<double>(tp + tp_before);
    curve.points.emplace_back(static_cast<double>(fp) / static_cast<double>(n_neg),
                              static_cast<double>(tp) / static_cast<double>(n_pos));
  }
  if (curve.points.back() != std::pair<double, double>{1.0, 1.0}) curve.points.emplace_back(1.0, 1.0);
  curve.auc = auc2 / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return curve;
}

RocCurve roc_curve_ovr(std::span<const int> y_true, const Eigen::Ref<const Eigen::MatrixXd>& scores, int class_id) {
  if (static_cast<Eigen::Index>(y_true.size()) != scores.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "labels and score rows differ in length");
  }
  if (class_id < 0 || class_id >= scores.cols()) throw Error(ErrorCode::kLabelOutOfRange, "class id out of range");
  const std::size_t n = y_true.size();
  auto positive = std::make_unique<bool[]>(n);
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    positive[i] = y_true[i] == class_id;
    s[i] = scores(static_cast<Eigen::Index>(i), class_id);
  }
  return roc_curve_binary(std::span<const bool>(positive.get(), n), s);
}

double auc_paircount_oracle(std::span<const bool> positive, std::span<const double> scores) {
  if (positive.size() != scores.size()) throw Error(ErrorCode::kLengthMismatch, "labels and scores differ in length");
  double wins = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < positive.size(); ++i) (positive[i] ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::kDegenerateClass, "AUC needs positives and negatives");
  for (std::size_t i = 0; i < positive.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < positive.size(); ++j) {
      if (positive[j]) continue;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace cytoclass

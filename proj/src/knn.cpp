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

#include "cytoclass/knn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cytoclass/classify.hpp"
#include "cytoclass/dataset.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/parallel.hpp"

namespace cytoclass {

void KnnModel::validate() const {
  if (k < 1 || k > train.rows()) {
    throw Error(ErrorCode::kInvalidConfig, "k must lie in [1, " + std::to_string(train.rows()) + "]");
  }
}

std::vector<Neighbor> nearest_neighbors(const RowMatrix& train, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                        std::size_t k) {
  if (x.size() != train.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "query has " + std::to_string(x.size()) + " features, model expects " +
                                                   std::to_string(train.cols()));
  }
  const auto n = static_cast<std::size_t>(train.rows());
  const auto d = train.cols();
  k = std::min(k, n);
  if (k == 0) return {};

  // Max-heap on (squared distance, index) holding the current best k.
  struct Entry {
    double sq;
    std::size_t index;
  };
  auto worse = [](const Entry& a, const Entry& b) { return a.sq < b.sq || (a.sq == b.sq && a.index < b.index); };
  std::vector<Entry> heap;
  heap.reserve(k);
  const double* q = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = train.data() + static_cast<Eigen::Index>(i) * d;
    const bool full = heap.size() == k;
    const double bound = full ? heap.front().sq : 0.0;
    double sq = 0.0;
    bool abandoned = false;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double diff = row[j] - q[j];
      sq += diff * diff;
      // Partial sums of non-negative terms only grow.
      if (full && sq > bound && (j & 15) == 15) {
        abandoned = true;
        break;
      }
    }
    if (abandoned) continue;
    if (!full) {
      heap.push_back({sq, i});
      std::push_heap(heap.begin(), heap.end(), worse);
    } else if (sq < bound) {
      std::pop_heap(heap.begin(), heap.end(), worse);
      heap.back() = {sq, i};
      std::push_heap(heap.begin(), heap.end(), worse);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), worse);
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  for (const auto& e : heap) out.push_back({e.index, std::sqrt(e.sq)});
  return out;
}

Eigen::VectorXd knn_scores_from_neighbors(const std::vector<Neighbor>& neighbors, const std::vector<int>& labels,
                                          KnnWeighting weighting, int n_classes) {
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(n_classes);
  if (neighbors.empty()) return scores;
  double total = 0.0;
  for (const auto& nb : neighbors) {
    const double w = weighting == KnnWeighting::kMajority ? 1.0 : 1.0 / (nb.distance + 1e-12);
    scores(labels[nb.index]) += w;
    total += w;
  }
  return scores / total;
}

Eigen::VectorXd knn_predict_scores(const KnnModel& m, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  m.validate();
  const auto neighbors = nearest_neighbors(m.train.values, x, static_cast<std::size_t>(m.k));
  return knn_scores_from_neighbors(neighbors, m.train.labels, m.weighting, kNumClasses);
}

int select_k(const FeatureMatrix& train, const FeatureMatrix& val, std::vector<int> candidates,
             KnnWeighting weighting) {
  if (val.rows() == 0) throw Error(ErrorCode::kEmptyValidation, "k selection needs a non-empty validation set");
  if (candidates.empty()) throw Error(ErrorCode::kInvalidArgument, "no k candidates");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  if (candidates.front() < 1 || candidates.back() > train.rows()) {
    throw Error(ErrorCode::kInvalidArgument, "k candidates must lie in [1, training rows]");
  }
  const auto max_k = static_cast<std::size_t>(candidates.back());
  std::vector<std::vector<Neighbor>> neighbors(static_cast<std::size_t>(val.rows()));
  parallel_for(neighbors.size(), [&](std::size_t i) {
    neighbors[i] = nearest_neighbors(train.values, val.values.row(static_cast<Eigen::Index>(i)), max_k);
  });

  int best_k = candidates.front();
  std::size_t best_correct = 0;
  bool first = true;
  for (const int k : candidates) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
      const std::vector<Neighbor> top(neighbors[i].begin(), neighbors[i].begin() + k);
      const auto scores = knn_scores_from_neighbors(top, train.labels, weighting, kNumClasses);
      if (argmax(scores) == val.labels[i]) ++correct;
    }
    if (first || correct > best_correct) {
      best_k = k;
      best_correct = correct;
      first = false;
    }
  }
  return best_k;
}

}  // namespace cytoclass

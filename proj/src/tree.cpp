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

#include "cytoclass/tree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <utility>

#include "cytoclass/error.hpp"
#include "cytoclass/parallel.hpp"

namespace cytoclass {

int DecisionTree::leaf_index(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
  int node = 0;
  while (!nodes[static_cast<std::size_t>(node)].is_leaf()) {
    const Node& n = nodes[static_cast<std::size_t>(node)];
    node = x(n.feature) <= n.threshold ? n.left : n.right;
  }
  return node;
}

int DecisionTree::depth() const {
  int d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return d;
}

std::size_t DecisionTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.is_leaf(); }));
}

int leaf_class(const DecisionTree& tree, int leaf) {
  const auto row = tree.leaf_values.row(leaf);
  int best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row(c) > row(best)) best = static_cast<int>(c);
  }
  return best;
}

PresortedColumns::PresortedColumns(const RowMatrix& x) : order(static_cast<std::size_t>(x.cols())) {
  parallel_for(order.size(), [&](std::size_t f) {
    auto& col = order[f];
    col.resize(static_cast<std::size_t>(x.rows()));
    std::iota(col.begin(), col.end(), 0u);
    const auto fi = static_cast<Eigen::Index>(f);
    std::stable_sort(col.begin(), col.end(), [&](std::uint32_t a, std::uint32_t b) { return x(a, fi) < x(b, fi); });
  });
}

double gini_impurity(std::span<const std::size_t> counts) {
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (n == 0) throw Error(ErrorCode::kEmptyNode, "gini impurity of an empty node");
  double sum_sq = 0.0;
  for (const std::size_t c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(n);
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

namespace {

struct Split {
  int feature = -1;
  double threshold = 0.0;
  // Regression: within-child squared error / n.
  double impurity = std::numeric_limits<double>::infinity();
  // Classification: sum(left^2) / n_left + sum(right^2) / n_right as an exact
  // fraction; larger means lower weighted Gini. Exact so equal splits tie.
  __int128 purity_num = 0;
  __int128 purity_den = 1;

  bool found() const { return feature >= 0; }
};

bool better_split(const Split& a, const Split& b, TreeMode mode) {
  if (!a.found()) return false;
  if (!b.found()) return true;
  if (mode == TreeMode::kClassify) return a.purity_num * b.purity_den > b.purity_num * a.purity_den;
  return a.impurity < b.impurity;
}

class TreeBuilder {
 public:
  TreeBuilder(const RowMatrix& x, std::span<const double> targets, const TreeConfig& cfg, SplitMix64& rng,
              TreeMode mode, const PresortedColumns* presorted)
      : x_(x), targets_(targets), cfg_(cfg), rng_(rng), mode_(mode), presorted_(presorted) {
    width_ = mode == TreeMode::kClassify ? cfg.n_classes : 1;
    if (presorted_ != nullptr) multiplicity_.assign(static_cast<std::size_t>(x.rows()), 0);
  }

  DecisionTree build(std::vector<std::size_t> samples) {
    tree_.mode = mode_;
    grow(std::move(samples), 0);
    tree_.leaf_values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tree_.nodes.size()), width_);
    for (std::size_t i = 0; i < values_.size(); ++i) {
      for (int k = 0; k < width_; ++k) tree_.leaf_values(static_cast<Eigen::Index>(i), k) = values_[i][static_cast<std::size_t>(k)];
    }
    return std::move(tree_);
  }

 private:
  int label(std::size_t row) const { return static_cast<int>(targets_[row]); }

  std::vector<double> leaf_row(const std::vector<std::size_t>& samples) const {
    std::vector<double> v(static_cast<std::size_t>(width_), 0.0);
    if (mode_ == TreeMode::kClassify) {
      for (const auto s : samples) v[static_cast<std::size_t>(label(s))] += 1.0;
    } else {
      double sum = 0.0;
      for (const auto s : samples) sum += targets_[s];
      v[0] = sum / static_cast<double>(samples.size());
    }
    return v;
  }

  bool is_pure(const std::vector<std::size_t>& samples) const {
    const double first = targets_[samples.front()];
    return std::all_of(samples.begin(), samples.end(), [&](std::size_t s) { return targets_[s] == first; });
  }

  std::vector<int> candidate_features() {
    const int p = static_cast<int>(x_.cols());
    const int m = cfg_.max_features;
    std::vector<int> features(static_cast<std::size_t>(p));
    std::iota(features.begin(), features.end(), 0);
    if (mode_ == TreeMode::kRegress || m <= 0 || m >= p) return features;
    for (int i = 0; i < m; ++i) {
      const auto j = i + static_cast<int>(rng_.bounded(static_cast<std::uint64_t>(p - i)));
      std::swap(features[static_cast<std::size_t>(i)], features[static_cast<std::size_t>(j)]);
    }
    features.resize(static_cast<std::size_t>(m));
    std::sort(features.begin(), features.end());
    return features;
  }

  // (value, row) pairs for the node sorted by value.
  std::vector<std::pair<double, std::size_t>> sorted_column(int feature, const std::vector<std::size_t>& samples) const {
    std::vector<std::pair<double, std::size_t>> col;
    col.reserve(samples.size());
    if (presorted_ != nullptr) {
      for (const std::uint32_t row : presorted_->order[static_cast<std::size_t>(feature)]) {
        for (std::uint32_t k = 0; k < multiplicity_[row]; ++k) col.emplace_back(x_(row, feature), row);
      }
      return col;
    }
    for (const auto s : samples) col.emplace_back(x_(static_cast<Eigen::Index>(s), feature), s);
    std::stable_sort(col.begin(), col.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return col;
  }

  Split best_split_for(int feature, const std::vector<std::size_t>& samples) const {
    const auto col = sorted_column(feature, samples);
    const std::size_t n = col.size();
    const auto min_leaf = static_cast<std::size_t>(std::max(cfg_.min_leaf, 1));
    Split best;
    best.feature = -1;

    auto consider = [&](std::size_t i, Split candidate) {
      candidate.feature = feature;
      if (better_split(candidate, best, mode_)) {
        const double lo = col[i].first, hi = col[i + 1].first;
        double mid = lo + (hi - lo) / 2.0;
        if (!(mid < hi)) mid = lo;
        candidate.threshold = mid;
        best = candidate;
      }
    };

    if (mode_ == TreeMode::kClassify) {
      std::vector<std::size_t> total(static_cast<std::size_t>(width_), 0), left(total.size(), 0), right(total.size());
      for (const auto& [v, row] : col) ++total[static_cast<std::size_t>(label(row))];
      for (std::size_t i = 0; i + 1 < n; ++i) {
        ++left[static_cast<std::size_t>(label(col[i].second))];
        if (col[i].first == col[i + 1].first) continue;
        const std::size_t n_left = i + 1, n_right = n - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        __int128 sq_left = 0, sq_right = 0;
        for (std::size_t c = 0; c < total.size(); ++c) {
          right[c] = total[c] - left[c];
          sq_left += static_cast<__int128>(left[c]) * left[c];
          sq_right += static_cast<__int128>(right[c]) * right[c];
        }
        Split candidate;
        candidate.purity_num = sq_left * n_right + sq_right * n_left;
        candidate.purity_den = static_cast<__int128>(n_left) * n_right;
        consider(i, candidate);
      }
    } else {
      double total_sum = 0.0, total_sq = 0.0;
      for (const auto& [v, row] : col) {
        total_sum += targets_[row];
        total_sq += targets_[row] * targets_[row];
      }
      double left_sum = 0.0, left_sq = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double t = targets_[col[i].second];
        left_sum += t;
        left_sq += t * t;
        if (col[i].first == col[i + 1].first) continue;
        const std::size_t n_left = i + 1, n_right = n - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        const double right_sum = total_sum - left_sum, right_sq = total_sq - left_sq;
        const double sse = (left_sq - left_sum * left_sum / static_cast<double>(n_left)) +
                           (right_sq - right_sum * right_sum / static_cast<double>(n_right));
        Split candidate;
        candidate.impurity = sse / static_cast<double>(n);
        consider(i, candidate);
      }
    }
    return best;
  }

  Split find_split(const std::vector<std::size_t>& samples) {
    const auto features = candidate_features();
    if (presorted_ != nullptr) {
      for (const auto s : samples) ++multiplicity_[s];
    }
    std::vector<Split> per_feature(features.size());
    const bool wide = samples.size() * features.size() > 200'000;
    auto evaluate = [&](std::size_t k) { per_feature[k] = best_split_for(features[k], samples); };
    if (wide) {
      parallel_for(features.size(), evaluate);
    } else {
      for (std::size_t k = 0; k < features.size(); ++k) evaluate(k);
    }
    if (presorted_ != nullptr) {
      for (const auto s : samples) multiplicity_[s] = 0;
    }
    Split best;
    for (const auto& s : per_feature) {
      if (better_split(s, best, mode_)) best = s;
    }
    return best;
  }

  int grow(std::vector<std::size_t> samples, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back({});
    tree_.nodes.back().depth = depth;
    values_.push_back(leaf_row(samples));

    const bool depth_capped = cfg_.max_depth > 0 && depth >= cfg_.max_depth;
    const bool too_small = samples.size() < 2 * static_cast<std::size_t>(std::max(cfg_.min_leaf, 1));
    if (depth_capped || too_small || is_pure(samples)) return id;

    const Split split = find_split(samples);
    if (!split.found()) return id;

    std::vector<std::size_t> left, right;
    for (const auto s : samples) {
      (x_(static_cast<Eigen::Index>(s), split.feature) <= split.threshold ? left : right).push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();
    std::fill(values_.back().begin(), values_.back().end(), 0.0);

    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  const RowMatrix& x_;
  std::span<const double> targets_;
  const TreeConfig& cfg_;
  SplitMix64& rng_;
  TreeMode mode_;
  const PresortedColumns* presorted_;
  int width_ = 1;
  std::vector<std::uint32_t> multiplicity_;
  DecisionTree tree_;
  std::vector<std::vector<double>> values_;
};

}  // namespace

DecisionTree grow_tree(const RowMatrix& x, std::span<const double> targets, std::span<const std::size_t> samples,
                       const TreeConfig& cfg, SplitMix64& rng, TreeMode mode, const PresortedColumns* presorted) {
  if (samples.empty()) throw Error(ErrorCode::kEmptyNode, "cannot grow a tree on zero samples");
  if (static_cast<Eigen::Index>(targets.size()) != x.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "targets must align with matrix rows");
  }
  if (mode == TreeMode::kClassify) {
    for (const auto s : samples) {
      const double t = targets[s];
      if (t < 0 || t >= cfg.n_classes) throw Error(ErrorCode::kLabelOutOfRange, "class label out of range");
    }
  }
  TreeBuilder builder(x, targets, cfg, rng, mode, presorted);
  return builder.build(std::vector<std::size_t>(samples.begin(), samples.end()));
}

}  // namespace cytoclass

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

#include "cytoclass/svm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cytoclass/dataset.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/parallel.hpp"
#include "cytoclass/random.hpp"

namespace cytoclass {

double Kernel::operator()(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                          const Eigen::Ref<const Eigen::RowVectorXd>& b) const {
  if (type == KernelType::kLinear) return a.dot(b);
  return std::exp(-gamma * (a - b).squaredNorm());
}

Eigen::MatrixXd kernel_matrix(const RowMatrix& x, const Kernel& kernel) {
  Eigen::MatrixXd k = x * x.transpose();
  if (kernel.type == KernelType::kLinear) return k;
  const Eigen::VectorXd norms = k.diagonal();
  for (Eigen::Index j = 0; j < k.cols(); ++j) {
    for (Eigen::Index i = 0; i < k.rows(); ++i) {
      const double sq = std::max(0.0, norms(i) + norms(j) - 2.0 * k(i, j));
      k(i, j) = i == j ? 1.0 : std::exp(-kernel.gamma * sq);
    }
  }
  return k;
}

double svm_dual_objective(const Eigen::VectorXd& alphas, const std::vector<int>& y, const Eigen::MatrixXd& gram) {
  Eigen::VectorXd ay(alphas.size());
  for (Eigen::Index i = 0; i < alphas.size(); ++i) ay(i) = alphas(i) * y[static_cast<std::size_t>(i)];
  return alphas.sum() - 0.5 * ay.dot(gram * ay);
}

BinarySvm smo_train_binary(const RowMatrix& x, const std::vector<int>& y, Kernel kernel, const SmoConfig& cfg,
                           const Eigen::MatrixXd* gram) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n != x.rows()) throw Error(ErrorCode::kLengthMismatch, "labels must align with rows");
  if (!(cfg.C > 0.0) || !(cfg.tol > 0.0)) throw Error(ErrorCode::kInvalidConfig, "SMO requires C > 0 and tol > 0");
  bool has_pos = false, has_neg = false;
  for (const int v : y) {
    if (v != 1 && v != -1) throw Error(ErrorCode::kLabelOutOfRange, "binary labels must be +1 or -1");
    (v > 0 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw Error(ErrorCode::kSingleClassInput, "SMO needs both +1 and -1 labels");
  if (kernel.type == KernelType::kRbf && kernel.gamma <= 0.0) kernel.gamma = 1.0 / static_cast<double>(x.cols());

  Eigen::MatrixXd local_gram;
  if (gram == nullptr) {
    local_gram = kernel_matrix(x, kernel);
    gram = &local_gram;
  }
  const Eigen::MatrixXd& k = *gram;
  const double c_box = cfg.C;

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);  // sum_l alpha_l y_l K(l, i)
  double b = 0.0;
  double objective = 0.0;
  SplitMix64 rng(cfg.seed);

  BinarySvm model;
  model.kernel = kernel;
  model.C = c_box;

  auto violates = [&](Eigen::Index i) {
    const double r = y[static_cast<std::size_t>(i)] * (g(i) + b) - 1.0;  // y_i E_i
    return (r < -cfg.tol && alpha(i) < c_box) || (r > cfg.tol && alpha(i) > 0.0);
  };

  // Rounding residue next to a bound would otherwise register as a KKT
  // violation too small to step on.
  auto snap = [&](double a) {
    const double eps = 1e-12 * c_box;
    if (a < eps) return 0.0;
    if (a > c_box - eps) return c_box;
    return a;
  };

  // Optimizes the pair (i, j) analytically; false when no step is possible.
  auto take_step = [&](Eigen::Index i, Eigen::Index j) {
    const double yi = y[static_cast<std::size_t>(i)], yj = y[static_cast<std::size_t>(j)];
    const double ei = g(i) + b - yi, ej = g(j) + b - yj;
    const double ai_old = alpha(i), aj_old = alpha(j);
    double lo, hi;
    if (yi != yj) {
      lo = std::max(0.0, aj_old - ai_old);
      hi = std::min(c_box, c_box + aj_old - ai_old);
    } else {
      lo = std::max(0.0, ai_old + aj_old - c_box);
      hi = std::min(c_box, ai_old + aj_old);
    }
    if (lo >= hi) return false;
    const double eta = 2.0 * k(i, j) - k(i, i) - k(j, j);
    if (eta >= 0.0) return false;
    const double aj = snap(std::clamp(aj_old - yj * (ei - ej) / eta, lo, hi));
    if (std::abs(aj - aj_old) < cfg.min_step) return false;
    const double ai = snap(std::clamp(ai_old + yi * yj * (aj_old - aj), 0.0, c_box));
    const double di = ai - ai_old, dj = aj - aj_old;

    const double b1 = b - ei - yi * di * k(i, i) - yj * dj * k(i, j);
    const double b2 = b - ej - yi * di * k(i, j) - yj * dj * k(j, j);
    if (ai > 0.0 && ai < c_box) {
      b = b1;
    } else if (aj > 0.0 && aj < c_box) {
      b = b2;
    } else {
      b = 0.5 * (b1 + b2);
    }

    objective += di + dj - (di * yi * g(i) + dj * yj * g(j)) -
                 0.5 * (di * di * k(i, i) + dj * dj * k(j, j) + 2.0 * di * dj * yi * yj * k(i, j));
    if (cfg.record_objective) model.objective_trace.push_back(objective);

    alpha(i) = ai;
    alpha(j) = aj;
    g += (yi * di) * k.col(i) + (yj * dj) * k.col(j);
    return true;
  };

  // The partner is drawn uniformly; if that pair cannot move, the remaining
  // partners are tried in index order starting after the draw.
  int passes = 0;
  int sweeps = 0;
  while (passes < cfg.max_passes && sweeps < cfg.max_sweeps) {
    int changed = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!violates(i)) continue;
      const auto first = static_cast<Eigen::Index>(rng.bounded(static_cast<std::uint64_t>(n - 1)));
      for (Eigen::Index t = 0; t < n - 1; ++t) {
        Eigen::Index j = (first + t) % (n - 1);
        if (j >= i) ++j;
        if (take_step(i, j)) {
          ++changed;
          break;
        }
      }
    }
    ++sweeps;
    passes = changed == 0 ? passes + 1 : 0;
  }

  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = y[static_cast<std::size_t>(i)] * (g(i) + b) - 1.0;
    double v = 0.0;
    if (alpha(i) < c_box) v = std::max(v, -r);
    if (alpha(i) > 0.0) v = std::max(v, r);
    worst = std::max(worst, v);
  }
  model.max_kkt_violation = worst;
  model.converged = worst <= cfg.tol;
  model.sweeps = sweeps;
  model.bias = b;
  model.dual_objective = objective;

  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (alpha(i) > 0.0) support.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(support.size());
  model.support_vectors.resize(m, x.cols());
  model.alphas.resize(m);
  model.labels.resize(m);
  model.support_indices.assign(support.begin(), support.end());
  for (Eigen::Index s = 0; s < m; ++s) {
    model.support_vectors.row(s) = x.row(support[static_cast<std::size_t>(s)]);
    model.alphas(s) = alpha(support[static_cast<std::size_t>(s)]);
    model.labels(s) = y[static_cast<std::size_t>(support[static_cast<std::size_t>(s)])];
  }
  return model;
}

double svm_decision_value(const BinarySvm& m, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  if (m.support_vectors.cols() > 0 && x.size() != m.support_vectors.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "input has " + std::to_string(x.size()) + " features, model expects " +
                                                   std::to_string(m.support_vectors.cols()));
  }
  double f = 0.0;
  for (Eigen::Index s = 0; s < m.support_vectors.rows(); ++s) {
    f += m.alphas(s) * m.labels(s) * m.kernel(m.support_vectors.row(s), x);
  }
  return f + m.bias;
}

MultiSvm ovr_fit(const FeatureMatrix& data, const Kernel& kernel, const SmoConfig& cfg) {
  std::array<bool, kNumClasses> present{};
  for (const int label : data.labels) {
    if (label < 0 || label >= kNumClasses) throw Error(ErrorCode::kLabelOutOfRange, "label out of range");
    present[static_cast<std::size_t>(label)] = true;
  }
  for (int c = 0; c < kNumClasses; ++c) {
    if (!present[static_cast<std::size_t>(c)]) {
      throw Error(ErrorCode::kMissingClass, "class " + std::to_string(c) + " has no training rows");
    }
  }
  Kernel resolved = kernel;
  if (resolved.type == KernelType::kRbf && resolved.gamma <= 0.0) resolved.gamma = 1.0 / static_cast<double>(data.cols());
  const Eigen::MatrixXd gram = kernel_matrix(data.values, resolved);

  MultiSvm model;
  model.machines.resize(kNumClasses);
  parallel_for(kNumClasses, [&](std::size_t c) {
    std::vector<int> y(data.labels.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = data.labels[i] == static_cast<int>(c) ? 1 : -1;
    SmoConfig machine_cfg = cfg;
    machine_cfg.seed = derive_seed(cfg.seed, c);
    model.machines[c] = smo_train_binary(data.values, y, resolved, machine_cfg, &gram);
  });
  return model;
}

Eigen::VectorXd ovr_predict_scores(const MultiSvm& m, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  Eigen::VectorXd scores(static_cast<Eigen::Index>(m.machines.size()));
  for (std::size_t c = 0; c < m.machines.size(); ++c) {
    scores(static_cast<Eigen::Index>(c)) = svm_decision_value(m.machines[c], x);
  }
  return scores;
}

}  // namespace cytoclass

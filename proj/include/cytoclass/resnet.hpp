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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cytoclass/dataset.hpp"
#include "cytoclass/image.hpp"
#include "cytoclass/random.hpp"

namespace cytoclass::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Activations of one example: channels x (height * width).
template <typename Scalar>
struct FeatureMap {
  int height = 0;
  int width = 0;
  Matrix<Scalar> data;

  int channels() const { return static_cast<int>(data.rows()); }
};

template <typename Scalar>
using Batch = std::vector<FeatureMap<Scalar>>;

enum class Mode { kTrain, kEval };

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Square convolution without bias, padding kernel / 2. Weights are
/// out x (in * k * k), matching the im2col row order (channel, ky, kx).
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride);

  void init_he_normal(SplitMix64& rng);
  Batch<Scalar> forward(const Batch<Scalar>& x, bool keep_cache);
  Batch<Scalar> infer(const Batch<Scalar>& x) const;
  /// Accumulates into weight.grad and returns the input gradient.
  Batch<Scalar> backward(const Batch<Scalar>& dy);

  int in_channels = 0, out_channels = 0, kernel = 1, stride = 1, pad = 0;
  Parameter<Scalar> weight;

 private:
  FeatureMap<Scalar> forward_one(const FeatureMap<Scalar>& x) const;
  Batch<Scalar> cached_input_;
};

template <typename Scalar>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels, double eps, double momentum);

  /// Train mode normalizes with batch statistics and updates the running
  /// estimates (running = momentum * running + (1 - momentum) * batch).
  Batch<Scalar> forward(const Batch<Scalar>& x, Mode mode, bool keep_cache);
  Batch<Scalar> infer(const Batch<Scalar>& x) const;
  Batch<Scalar> backward(const Batch<Scalar>& dy);

  Parameter<Scalar> gamma, beta;  // channels x 1
  Vector<Scalar> running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.9;

 private:
  Batch<Scalar> cached_xhat_;
  Vector<Scalar> cached_inv_std_;
};

/// 1x1 reduce -> BN -> ReLU -> 3x3 (strided) -> BN -> ReLU -> 1x1 expand -> BN,
/// plus an identity or projected (1x1 conv + BN) skip, then ReLU.
template <typename Scalar>
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(const std::string& name, int in_channels, int out_channels, int stride, double eps, double momentum);

  void init(SplitMix64& rng);
  Batch<Scalar> forward(const Batch<Scalar>& x, Mode mode, bool keep_cache);
  Batch<Scalar> infer(const Batch<Scalar>& x) const;
  Batch<Scalar> backward(const Batch<Scalar>& dy);

  bool has_projection() const { return projection.has_value(); }
  std::vector<Parameter<Scalar>*> parameters();
  std::vector<BatchNorm2d<Scalar>*> norms();

  Conv2d<Scalar> conv1, conv2, conv3;
  BatchNorm2d<Scalar> bn1, bn2, bn3;
  std::optional<std::pair<Conv2d<Scalar>, BatchNorm2d<Scalar>>> projection;

 private:
  Batch<Scalar> cached_h1_, cached_h2_, cached_out_;
};

struct NetConfig {
  int input_side = 64;
  int input_channels = 1;
  int stem_channels = 16;
  std::vector<int> stage_blocks = {1, 1, 1};
  std::vector<int> stage_channels = {32, 64, 128};  // bottleneck output widths; inner width is a quarter
  int n_classes = 5;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;

  void validate() const;
  /// Fifty-layer topology (3, 4, 6, 3 bottlenecks).
  static NetConfig resnet50(int input_side, int input_channels, int n_classes);
};

/// Result of a forward pass. Train-mode passes may be fed to backward()
/// until the next forward pass or parameter update.
template <typename Scalar>
struct ForwardPass {
  Matrix<Scalar> logits;  // batch x classes
  std::uint64_t id = 0;
  Mode mode = Mode::kEval;
};

template <typename Scalar>
class ResidualNetwork {
 public:
  ResidualNetwork() = default;
  ResidualNetwork(const NetConfig& cfg, std::uint64_t seed);

  ForwardPass<Scalar> forward(const Batch<Scalar>& x, Mode mode);
  /// Eval-mode logits without touching any cached state.
  Matrix<Scalar> infer(const Batch<Scalar>& x) const;
  /// Fills every Parameter::grad with d(loss)/d(param) and returns the input
  /// gradient. Throws StaleCache unless `pass` is the latest train-mode pass.
  Batch<Scalar> backward(const ForwardPass<Scalar>& pass, const Matrix<Scalar>& dlogits);

  std::vector<Parameter<Scalar>*> parameters();
  std::vector<const Parameter<Scalar>*> parameters() const;
  std::vector<BatchNorm2d<Scalar>*> norms();
  std::vector<const BatchNorm2d<Scalar>*> norms() const;
  std::size_t parameter_count() const;
  /// Weighted layers on the main path: stem, three per bottleneck, head.
  int layer_count() const;
  /// Marks cached activations stale (called after parameter updates).
  void invalidate_cache() { ++generation_; }

  NetConfig cfg;
  Conv2d<Scalar> stem;
  BatchNorm2d<Scalar> stem_bn;
  std::vector<Bottleneck<Scalar>> blocks;
  Parameter<Scalar> head_weight;  // classes x channels
  Parameter<Scalar> head_bias;    // classes x 1

 private:
  Batch<Scalar> cached_stem_out_;
  Batch<Scalar> cached_final_;
  Matrix<Scalar> cached_pooled_;
  std::uint64_t generation_ = 1;
  std::uint64_t cached_id_ = 0;
};

/// Global average pool: batch x channels.
template <typename Scalar>
Matrix<Scalar> global_average_pool(const Batch<Scalar>& x);

template <typename Scalar>
Matrix<Scalar> linear_head(const Matrix<Scalar>& pooled, const Parameter<Scalar>& weight, const Parameter<Scalar>& bias);

/// Mean negative log-likelihood and its gradient (softmax - onehot) / batch.
template <typename Scalar>
std::pair<double, Matrix<Scalar>> softmax_xent(const Matrix<Scalar>& logits, const std::vector<int>& labels);

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamConfig hyper;
  long step = 0;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
};

/// Bias-corrected Adam update of every parameter from its grad. Moments are
/// allocated on the first step.
template <typename Scalar>
void adam_step(const std::vector<Parameter<Scalar>*>& params, AdamState<Scalar>& state);

template <typename Scalar>
FeatureMap<Scalar> to_feature_map(const Plane& plane);

struct TrainOptions {
  int epochs = 500;
  int batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 42;
  std::optional<AugmentConfig> augment;
  /// Stop once validation accuracy reaches this value.
  std::optional<double> stop_at_val_accuracy;
  bool verbose = false;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // train-mode predictions of the epoch's batches
  std::optional<double> val_accuracy;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = -1;  // -1 when no epoch ran
};

/// Mini-batch training from unit-scale planes (augmentation is applied to a
/// copy, then normalization). Per epoch: seeded shuffle, batches of
/// batch_size with the last partial batch kept, Adam updates. On return the
/// network holds the parameters of the epoch with the best validation
/// accuracy (earliest on ties, last epoch without validation data).
template <typename Scalar>
TrainResult train(ResidualNetwork<Scalar>& net, const std::vector<Plane>& train_planes,
                  const std::vector<int>& train_labels, const std::vector<Plane>& val_planes,
                  const std::vector<int>& val_labels, const ChannelStats& stats, const TrainOptions& options);

/// Eval-mode class probabilities for normalized planes, in batches.
template <typename Scalar>
Matrix<double> predict_proba(const ResidualNetwork<Scalar>& net, const std::vector<Plane>& planes, int batch_size = 32);

#define CYTOCLASS_NN_EXTERN(S)                                                                       \
  extern template class Conv2d<S>;                                                                   \
  extern template class BatchNorm2d<S>;                                                              \
  extern template class Bottleneck<S>;                                                               \
  extern template class ResidualNetwork<S>;
CYTOCLASS_NN_EXTERN(float)
CYTOCLASS_NN_EXTERN(double)
#undef CYTOCLASS_NN_EXTERN

}  // namespace cytoclass::nn

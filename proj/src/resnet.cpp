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

#include "cytoclass/resnet.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

#include "cytoclass/error.hpp"
#include "cytoclass/parallel.hpp"

namespace cytoclass::nn {
namespace {

template <typename Scalar>
Parameter<Scalar> make_parameter(std::string name, Eigen::Index rows, Eigen::Index cols) {
  Parameter<Scalar> p;
  p.name = std::move(name);
  p.value = Matrix<Scalar>::Zero(rows, cols);
  p.grad = Matrix<Scalar>::Zero(rows, cols);
  return p;
}

template <typename Scalar>
void fill_normal(Matrix<Scalar>& m, double stddev, SplitMix64& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * rng.normal());
}

template <typename Scalar>
Batch<Scalar> relu(Batch<Scalar> x) {
  for (auto& fm : x) fm.data = fm.data.cwiseMax(Scalar(0));
  return x;
}

// Gradient through ReLU given its output.
template <typename Scalar>
Batch<Scalar> relu_backward(const Batch<Scalar>& out, Batch<Scalar> dy) {
  for (std::size_t n = 0; n < dy.size(); ++n) {
    dy[n].data = (out[n].data.array() > Scalar(0)).select(dy[n].data, Scalar(0));
  }
  return dy;
}

template <typename Scalar>
Batch<Scalar> add(Batch<Scalar> a, const Batch<Scalar>& b) {
  for (std::size_t n = 0; n < a.size(); ++n) a[n].data += b[n].data;
  return a;
}

int conv_out(int size, int kernel, int stride, int pad) { return (size + 2 * pad - kernel) / stride + 1; }

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d

template <typename Scalar>
Conv2d<Scalar>::Conv2d(std::string name, int in, int out, int k, int s)
    : in_channels(in), out_channels(out), kernel(k), stride(s), pad(k / 2) {
  weight = make_parameter<Scalar>(std::move(name), out, static_cast<Eigen::Index>(in) * k * k);
}

template <typename Scalar>
void Conv2d<Scalar>::init_he_normal(SplitMix64& rng) {
  fill_normal(weight.value, std::sqrt(2.0 / (static_cast<double>(in_channels) * kernel * kernel)), rng);
}

namespace {

template <typename Scalar>
Matrix<Scalar> im2col(const FeatureMap<Scalar>& x, int k, int stride, int pad, int out_h, int out_w) {
  const int channels = x.channels();
  Matrix<Scalar> cols(static_cast<Eigen::Index>(channels) * k * k, static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < channels; ++c) {
    const Scalar* src = x.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          Scalar* out_row = dst + static_cast<std::ptrdiff_t>(oy) * out_w;
          if (iy < 0 || iy >= x.height) {
            std::fill(out_row, out_row + out_w, Scalar(0));
            continue;
          }
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            out_row[ox] = (ix >= 0 && ix < x.width) ? src[iy * x.width + ix] : Scalar(0);
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
void col2im(const Matrix<Scalar>& cols, FeatureMap<Scalar>& dx, int k, int stride, int pad, int out_h, int out_w) {
  const int channels = dx.channels();
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = dx.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = cols.row((static_cast<Eigen::Index>(c) * k + ky) * k + kx).data();
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= dx.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < dx.width) dst[iy * dx.width + ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename Scalar>
FeatureMap<Scalar> Conv2d<Scalar>::forward_one(const FeatureMap<Scalar>& x) const {
  if (x.channels() != in_channels) {
    throw Error(ErrorCode::kShapeMismatch, weight.name + ": expected " + std::to_string(in_channels) +
                                               " input channels, got " + std::to_string(x.channels()));
  }
  FeatureMap<Scalar> y;
  y.height = conv_out(x.height, kernel, stride, pad);
  y.width = conv_out(x.width, kernel, stride, pad);
  if (kernel == 1 && stride == 1) {
    y.data.noalias() = weight.value * x.data;
  } else {
    y.data.noalias() = weight.value * im2col(x, kernel, stride, pad, y.height, y.width);
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> Conv2d<Scalar>::infer(const Batch<Scalar>& x) const {
  Batch<Scalar> y(x.size());
  parallel_for(x.size(), [&](std::size_t n) { y[n] = forward_one(x[n]); });
  return y;
}

template <typename Scalar>
Batch<Scalar> Conv2d<Scalar>::forward(const Batch<Scalar>& x, bool keep_cache) {
  if (keep_cache) cached_input_ = x;
  return infer(x);
}

template <typename Scalar>
Batch<Scalar> Conv2d<Scalar>::backward(const Batch<Scalar>& dy) {
  if (cached_input_.size() != dy.size()) throw Error(ErrorCode::kStaleCache, weight.name + ": no matching forward cache");
  const std::size_t n = dy.size();
  Batch<Scalar> dx(n);
  std::vector<Matrix<Scalar>> partial(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& x = cached_input_[i];
    dx[i].height = x.height;
    dx[i].width = x.width;
    if (kernel == 1 && stride == 1) {
      partial[i].noalias() = dy[i].data * x.data.transpose();
      dx[i].data.noalias() = weight.value.transpose() * dy[i].data;
      return;
    }
    const Matrix<Scalar> cols = im2col(x, kernel, stride, pad, dy[i].height, dy[i].width);
    partial[i].noalias() = dy[i].data * cols.transpose();
    const Matrix<Scalar> dcols = weight.value.transpose() * dy[i].data;
    dx[i].data = Matrix<Scalar>::Zero(in_channels, static_cast<Eigen::Index>(x.height) * x.width);
    col2im(dcols, dx[i], kernel, stride, pad, dy[i].height, dy[i].width);
  });
  for (const auto& p : partial) weight.grad += p;
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm2d

template <typename Scalar>
BatchNorm2d<Scalar>::BatchNorm2d(std::string name, int channels, double eps_, double momentum_)
    : eps(eps_), momentum(momentum_) {
  gamma = make_parameter<Scalar>(name + ".gamma", channels, 1);
  beta = make_parameter<Scalar>(name + ".beta", channels, 1);
  gamma.value.setOnes();
  running_mean = Vector<Scalar>::Zero(channels);
  running_var = Vector<Scalar>::Ones(channels);
}

template <typename Scalar>
Batch<Scalar> BatchNorm2d<Scalar>::infer(const Batch<Scalar>& x) const {
  const Vector<Scalar> scale =
      gamma.value.col(0).array() / (running_var.array() + static_cast<Scalar>(eps)).sqrt();
  const Vector<Scalar> shift = beta.value.col(0).array() - running_mean.array() * scale.array();
  Batch<Scalar> y = x;
  for (auto& fm : y) {
    fm.data = (fm.data.array().colwise() * scale.array()).colwise() + shift.array();
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> BatchNorm2d<Scalar>::forward(const Batch<Scalar>& x, Mode mode, bool keep_cache) {
  if (mode == Mode::kEval) return infer(x);
  if (x.empty()) throw Error(ErrorCode::kShapeMismatch, "empty batch");
  const Eigen::Index channels = gamma.value.rows();
  if (x.front().data.rows() != channels) throw Error(ErrorCode::kShapeMismatch, gamma.name + ": channel count");
  const double m = static_cast<double>(x.size()) * static_cast<double>(x.front().data.cols());

  Vector<Scalar> mean = Vector<Scalar>::Zero(channels);
  for (const auto& fm : x) mean += fm.data.rowwise().sum();
  mean /= static_cast<Scalar>(m);
  Vector<Scalar> var = Vector<Scalar>::Zero(channels);
  for (const auto& fm : x) var += (fm.data.colwise() - mean).array().square().matrix().rowwise().sum();
  var /= static_cast<Scalar>(m);
  const Vector<Scalar> inv_std = (var.array() + static_cast<Scalar>(eps)).rsqrt();

  Batch<Scalar> xhat(x.size());
  Batch<Scalar> y(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    xhat[n].height = y[n].height = x[n].height;
    xhat[n].width = y[n].width = x[n].width;
    xhat[n].data = (x[n].data.colwise() - mean).array().colwise() * inv_std.array();
    y[n].data = (xhat[n].data.array().colwise() * gamma.value.col(0).array()).colwise() + beta.value.col(0).array();
  }

  const auto mom = static_cast<Scalar>(momentum);
  const Scalar unbias = m > 1.0 ? static_cast<Scalar>(m / (m - 1.0)) : Scalar(1);
  running_mean = mom * running_mean + (Scalar(1) - mom) * mean;
  running_var = mom * running_var + (Scalar(1) - mom) * unbias * var;

  if (keep_cache) {
    cached_xhat_ = std::move(xhat);
    cached_inv_std_ = inv_std;
  }
  return y;
}

template <typename Scalar>
Batch<Scalar> BatchNorm2d<Scalar>::backward(const Batch<Scalar>& dy) {
  if (cached_xhat_.size() != dy.size()) throw Error(ErrorCode::kStaleCache, gamma.name + ": no matching forward cache");
  const Eigen::Index channels = gamma.value.rows();
  const auto m = static_cast<Scalar>(static_cast<double>(dy.size()) * static_cast<double>(dy.front().data.cols()));
  Vector<Scalar> dbeta = Vector<Scalar>::Zero(channels);
  Vector<Scalar> dgamma = Vector<Scalar>::Zero(channels);
  for (std::size_t n = 0; n < dy.size(); ++n) {
    dbeta += dy[n].data.rowwise().sum();
    dgamma += dy[n].data.cwiseProduct(cached_xhat_[n].data).rowwise().sum();
  }
  gamma.grad.col(0) += dgamma;
  beta.grad.col(0) += dbeta;

  const Vector<Scalar> coef = gamma.value.col(0).array() * cached_inv_std_.array() / m;
  Batch<Scalar> dx(dy.size());
  for (std::size_t n = 0; n < dy.size(); ++n) {
    dx[n].height = dy[n].height;
    dx[n].width = dy[n].width;
    const auto centered = ((m * dy[n].data).colwise() - dbeta).array() -
                          cached_xhat_[n].data.array().colwise() * dgamma.array();
    dx[n].data = centered.colwise() * coef.array();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Bottleneck

template <typename Scalar>
Bottleneck<Scalar>::Bottleneck(const std::string& name, int in, int out, int stride, double eps, double momentum) {
  const int mid = std::max(1, out / 4);
  conv1 = Conv2d<Scalar>(name + ".conv1.weight", in, mid, 1, 1);
  bn1 = BatchNorm2d<Scalar>(name + ".bn1", mid, eps, momentum);
  conv2 = Conv2d<Scalar>(name + ".conv2.weight", mid, mid, 3, stride);
  bn2 = BatchNorm2d<Scalar>(name + ".bn2", mid, eps, momentum);
  conv3 = Conv2d<Scalar>(name + ".conv3.weight", mid, out, 1, 1);
  bn3 = BatchNorm2d<Scalar>(name + ".bn3", out, eps, momentum);
  if (stride != 1 || in != out) {
    projection.emplace(Conv2d<Scalar>(name + ".proj.weight", in, out, 1, stride),
                       BatchNorm2d<Scalar>(name + ".proj_bn", out, eps, momentum));
  }
}

template <typename Scalar>
void Bottleneck<Scalar>::init(SplitMix64& rng) {
  conv1.init_he_normal(rng);
  conv2.init_he_normal(rng);
  conv3.init_he_normal(rng);
  if (projection) projection->first.init_he_normal(rng);
  // The residual branch starts switched off.
  bn3.gamma.value.setZero();
}

template <typename Scalar>
Batch<Scalar> Bottleneck<Scalar>::infer(const Batch<Scalar>& x) const {
  Batch<Scalar> h = relu(bn1.infer(conv1.infer(x)));
  h = relu(bn2.infer(conv2.infer(h)));
  h = bn3.infer(conv3.infer(h));
  const Batch<Scalar> skip = projection ? projection->second.infer(projection->first.infer(x)) : x;
  return relu(add(std::move(h), skip));
}

template <typename Scalar>
Batch<Scalar> Bottleneck<Scalar>::forward(const Batch<Scalar>& x, Mode mode, bool keep_cache) {
  if (mode == Mode::kEval) return infer(x);
  Batch<Scalar> h1 = relu(bn1.forward(conv1.forward(x, keep_cache), mode, keep_cache));
  Batch<Scalar> h2 = relu(bn2.forward(conv2.forward(h1, keep_cache), mode, keep_cache));
  Batch<Scalar> h3 = bn3.forward(conv3.forward(h2, keep_cache), mode, keep_cache);
  Batch<Scalar> skip =
      projection ? projection->second.forward(projection->first.forward(x, keep_cache), mode, keep_cache) : x;
  Batch<Scalar> out = relu(add(std::move(h3), skip));
  if (keep_cache) {
    cached_h1_ = std::move(h1);
    cached_h2_ = std::move(h2);
    cached_out_ = out;
  }
  return out;
}

template <typename Scalar>
Batch<Scalar> Bottleneck<Scalar>::backward(const Batch<Scalar>& dy) {
  if (cached_out_.size() != dy.size()) throw Error(ErrorCode::kStaleCache, "bottleneck: no matching forward cache");
  const Batch<Scalar> d = relu_backward(cached_out_, dy);
  Batch<Scalar> branch = conv3.backward(bn3.backward(d));
  branch = conv2.backward(bn2.backward(relu_backward(cached_h2_, std::move(branch))));
  branch = conv1.backward(bn1.backward(relu_backward(cached_h1_, std::move(branch))));
  Batch<Scalar> skip = projection ? projection->first.backward(projection->second.backward(d)) : d;
  return add(std::move(branch), skip);
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> Bottleneck<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> p = {&conv1.weight, &bn1.gamma, &bn1.beta, &conv2.weight, &bn2.gamma,
                                       &bn2.beta,     &conv3.weight, &bn3.gamma, &bn3.beta};
  if (projection) {
    p.push_back(&projection->first.weight);
    p.push_back(&projection->second.gamma);
    p.push_back(&projection->second.beta);
  }
  return p;
}

template <typename Scalar>
std::vector<BatchNorm2d<Scalar>*> Bottleneck<Scalar>::norms() {
  std::vector<BatchNorm2d<Scalar>*> n = {&bn1, &bn2, &bn3};
  if (projection) n.push_back(&projection->second);
  return n;
}

// ---------------------------------------------------------------------------
// ResidualNetwork

void NetConfig::validate() const {
  if (input_side < 1 || input_channels < 1 || stem_channels < 1 || n_classes < 2 || stage_blocks.empty() ||
      stage_blocks.size() != stage_channels.size() || !(bn_eps > 0.0) || !(bn_momentum >= 0.0 && bn_momentum < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid network configuration");
  }
  for (std::size_t s = 0; s < stage_blocks.size(); ++s) {
    if (stage_blocks[s] < 1 || stage_channels[s] < 1) {
      throw Error(ErrorCode::kInvalidConfig, "every stage needs at least one block and one channel");
    }
  }
}

NetConfig NetConfig::resnet50(int input_side, int input_channels, int n_classes) {
  NetConfig cfg;
  cfg.input_side = input_side;
  cfg.input_channels = input_channels;
  cfg.stem_channels = 64;
  cfg.stage_blocks = {3, 4, 6, 3};
  cfg.stage_channels = {256, 512, 1024, 2048};
  cfg.n_classes = n_classes;
  return cfg;
}

template <typename Scalar>
ResidualNetwork<Scalar>::ResidualNetwork(const NetConfig& config, std::uint64_t seed) : cfg(config) {
  cfg.validate();
  SplitMix64 rng(seed);
  stem = Conv2d<Scalar>("stem.weight", cfg.input_channels, cfg.stem_channels, 3, 1);
  stem_bn = BatchNorm2d<Scalar>("stem_bn", cfg.stem_channels, cfg.bn_eps, cfg.bn_momentum);
  stem.init_he_normal(rng);
  int channels = cfg.stem_channels;
  for (std::size_t s = 0; s < cfg.stage_blocks.size(); ++s) {
    for (int b = 0; b < cfg.stage_blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
      blocks.emplace_back(name, channels, cfg.stage_channels[s], stride, cfg.bn_eps, cfg.bn_momentum);
      blocks.back().init(rng);
      channels = cfg.stage_channels[s];
    }
  }
  head_weight = make_parameter<Scalar>("head.weight", cfg.n_classes, channels);
  head_bias = make_parameter<Scalar>("head.bias", cfg.n_classes, 1);
  fill_normal(head_weight.value, 1.0 / std::sqrt(static_cast<double>(channels)), rng);
}

template <typename Scalar>
Matrix<Scalar> global_average_pool(const Batch<Scalar>& x) {
  if (x.empty()) return {};
  Matrix<Scalar> pooled(static_cast<Eigen::Index>(x.size()), x.front().data.rows());
  for (std::size_t n = 0; n < x.size(); ++n) {
    pooled.row(static_cast<Eigen::Index>(n)) =
        x[n].data.rowwise().sum().transpose() / static_cast<Scalar>(x[n].data.cols());
  }
  return pooled;
}

template <typename Scalar>
Matrix<Scalar> linear_head(const Matrix<Scalar>& pooled, const Parameter<Scalar>& weight, const Parameter<Scalar>& bias) {
  if (pooled.cols() != weight.value.cols()) throw Error(ErrorCode::kShapeMismatch, "head input width");
  Matrix<Scalar> logits = pooled * weight.value.transpose();
  logits.rowwise() += bias.value.col(0).transpose();
  return logits;
}

namespace {

template <typename Scalar>
void check_input(const NetConfig& cfg, const Batch<Scalar>& x) {
  if (x.empty()) throw Error(ErrorCode::kShapeMismatch, "empty batch");
  for (const auto& fm : x) {
    if (fm.channels() != cfg.input_channels || fm.height != cfg.input_side || fm.width != cfg.input_side ||
        fm.data.cols() != static_cast<Eigen::Index>(fm.height) * fm.width) {
      throw Error(ErrorCode::kShapeMismatch,
                  "expected " + std::to_string(cfg.input_channels) + "x" + std::to_string(cfg.input_side) + "x" +
                      std::to_string(cfg.input_side) + " input, got " + std::to_string(fm.channels()) + "x" +
                      std::to_string(fm.height) + "x" + std::to_string(fm.width));
    }
  }
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> ResidualNetwork<Scalar>::infer(const Batch<Scalar>& x) const {
  check_input(cfg, x);
  Batch<Scalar> h = relu(stem_bn.infer(stem.infer(x)));
  for (const auto& block : blocks) h = block.infer(h);
  return linear_head(global_average_pool(h), head_weight, head_bias);
}

template <typename Scalar>
ForwardPass<Scalar> ResidualNetwork<Scalar>::forward(const Batch<Scalar>& x, Mode mode) {
  ForwardPass<Scalar> pass;
  pass.mode = mode;
  if (mode == Mode::kEval) {
    pass.logits = infer(x);
    return pass;
  }
  check_input(cfg, x);
  Batch<Scalar> h = relu(stem_bn.forward(stem.forward(x, true), mode, true));
  cached_stem_out_ = h;
  for (auto& block : blocks) h = block.forward(h, mode, true);
  cached_pooled_ = global_average_pool(h);
  cached_final_ = std::move(h);
  pass.logits = linear_head(cached_pooled_, head_weight, head_bias);
  ++generation_;
  cached_id_ = generation_;
  pass.id = cached_id_;
  return pass;
}

template <typename Scalar>
Batch<Scalar> ResidualNetwork<Scalar>::backward(const ForwardPass<Scalar>& pass, const Matrix<Scalar>& dlogits) {
  if (pass.mode != Mode::kTrain || pass.id == 0 || pass.id != cached_id_ || cached_id_ != generation_) {
    throw Error(ErrorCode::kStaleCache, "backward needs the latest train-mode forward pass");
  }
  if (dlogits.rows() != cached_pooled_.rows() || dlogits.cols() != cfg.n_classes) {
    throw Error(ErrorCode::kShapeMismatch, "logit gradient shape");
  }
  for (auto* p : parameters()) p->zero_grad();

  head_weight.grad.noalias() = dlogits.transpose() * cached_pooled_;
  head_bias.grad.col(0) = dlogits.colwise().sum().transpose();
  const Matrix<Scalar> dpooled = dlogits * head_weight.value;

  Batch<Scalar> d(cached_final_.size());
  for (std::size_t n = 0; n < d.size(); ++n) {
    const auto& fm = cached_final_[n];
    d[n].height = fm.height;
    d[n].width = fm.width;
    const Eigen::Index area = fm.data.cols();
    d[n].data = (dpooled.row(static_cast<Eigen::Index>(n)).transpose() / static_cast<Scalar>(area)).replicate(1, area);
  }
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) d = it->backward(d);
  d = relu_backward(cached_stem_out_, std::move(d));
  return stem.backward(stem_bn.backward(d));
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> ResidualNetwork<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> p = {&stem.weight, &stem_bn.gamma, &stem_bn.beta};
  for (auto& block : blocks) {
    const auto bp = block.parameters();
    p.insert(p.end(), bp.begin(), bp.end());
  }
  p.push_back(&head_weight);
  p.push_back(&head_bias);
  return p;
}

template <typename Scalar>
std::vector<const Parameter<Scalar>*> ResidualNetwork<Scalar>::parameters() const {
  auto mutable_params = const_cast<ResidualNetwork*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename Scalar>
std::vector<BatchNorm2d<Scalar>*> ResidualNetwork<Scalar>::norms() {
  std::vector<BatchNorm2d<Scalar>*> n = {&stem_bn};
  for (auto& block : blocks) {
    const auto bn = block.norms();
    n.insert(n.end(), bn.begin(), bn.end());
  }
  return n;
}

template <typename Scalar>
std::vector<const BatchNorm2d<Scalar>*> ResidualNetwork<Scalar>::norms() const {
  auto mutable_norms = const_cast<ResidualNetwork*>(this)->norms();
  return {mutable_norms.begin(), mutable_norms.end()};
}

template <typename Scalar>
std::size_t ResidualNetwork<Scalar>::parameter_count() const {
  std::size_t total = 0;
  for (const auto* p : parameters()) total += static_cast<std::size_t>(p->value.size());
  return total;
}

template <typename Scalar>
int ResidualNetwork<Scalar>::layer_count() const {
  return 2 + 3 * static_cast<int>(blocks.size());
}

// ---------------------------------------------------------------------------
// Loss and optimizer

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <typename Scalar>
std::pair<double, Matrix<Scalar>> softmax_xent(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows() || logits.rows() == 0) {
    throw Error(ErrorCode::kLengthMismatch, "one label per logit row required");
  }
  Matrix<Scalar> grad = softmax_rows(logits);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(y));
    const double mx = static_cast<double>(logits.row(i).maxCoeff());
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum += std::exp(static_cast<double>(logits(i, c)) - mx);
    loss += mx + std::log(sum) - static_cast<double>(logits(i, y));
    grad(i, y) -= Scalar(1);
  }
  const auto n = static_cast<Scalar>(logits.rows());
  grad /= n;
  return {loss / static_cast<double>(logits.rows()), grad};
}

template <typename Scalar>
void adam_step(const std::vector<Parameter<Scalar>*>& params, AdamState<Scalar>& state) {
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw Error(ErrorCode::kShapeMismatch, "optimizer state size");
  ++state.step;
  const auto& h = state.hyper;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(h.beta1);
  const auto b2 = static_cast<Scalar>(h.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols() || p.grad.size() != p.value.size()) {
      throw Error(ErrorCode::kShapeMismatch, p.name + ": optimizer state shape");
    }
    m = b1 * m + (Scalar(1) - b1) * p.grad;
    v = b2 * v + (Scalar(1) - b2) * p.grad.cwiseProduct(p.grad);
    const auto m_hat = m.array() / static_cast<Scalar>(c1);
    const auto v_hat = v.array() / static_cast<Scalar>(c2);
    p.value.array() -= static_cast<Scalar>(h.lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(h.eps));
  }
}

template <typename Scalar>
FeatureMap<Scalar> to_feature_map(const Plane& plane) {
  FeatureMap<Scalar> fm;
  fm.height = static_cast<int>(plane.rows());
  fm.width = static_cast<int>(plane.cols());
  fm.data = Eigen::Map<const Matrix<double>>(plane.data(), 1, plane.size()).template cast<Scalar>();
  return fm;
}

// ---------------------------------------------------------------------------
// Training

namespace {

template <typename Scalar>
struct Snapshot {
  std::vector<Matrix<Scalar>> values;
  std::vector<Vector<Scalar>> means, vars;

  void take(ResidualNetwork<Scalar>& net) {
    values.clear();
    means.clear();
    vars.clear();
    for (auto* p : net.parameters()) values.push_back(p->value);
    for (auto* n : net.norms()) {
      means.push_back(n->running_mean);
      vars.push_back(n->running_var);
    }
  }

  void restore(ResidualNetwork<Scalar>& net) const {
    auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
    auto norms = net.norms();
    for (std::size_t i = 0; i < norms.size(); ++i) {
      norms[i]->running_mean = means[i];
      norms[i]->running_var = vars[i];
    }
    net.invalidate_cache();
  }
};

template <typename Scalar>
int count_correct(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return correct;
}

}  // namespace

template <typename Scalar>
Matrix<double> predict_proba(const ResidualNetwork<Scalar>& net, const std::vector<Plane>& planes, int batch_size) {
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be positive");
  Matrix<double> probs(static_cast<Eigen::Index>(planes.size()), net.cfg.n_classes);
  for (std::size_t start = 0; start < planes.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(planes.size(), start + static_cast<std::size_t>(batch_size));
    Batch<Scalar> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(to_feature_map<Scalar>(planes[i]));
    const Matrix<Scalar> p = softmax_rows(net.infer(batch));
    probs.middleRows(static_cast<Eigen::Index>(start), p.rows()) = p.template cast<double>();
  }
  return probs;
}

template <typename Scalar>
TrainResult train(ResidualNetwork<Scalar>& net, const std::vector<Plane>& train_planes,
                  const std::vector<int>& train_labels, const std::vector<Plane>& val_planes,
                  const std::vector<int>& val_labels, const ChannelStats& stats, const TrainOptions& options) {
  if (train_planes.empty()) throw Error(ErrorCode::kEmptyDataset, "no training examples");
  if (train_planes.size() != train_labels.size() || val_planes.size() != val_labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, "one label per plane required");
  }
  if (options.epochs < 0 || options.batch_size < 1) throw Error(ErrorCode::kInvalidConfig, "epochs and batch size");

  std::vector<Plane> val_norm = val_planes;
  for (auto& p : val_norm) normalize_in_place(p, stats);

  AdamState<Scalar> adam;
  adam.hyper = options.adam;
  TrainResult result;
  Snapshot<Scalar> best;
  double best_acc = -1.0;
  const std::size_t n = train_planes.size();
  const auto bs = static_cast<std::size_t>(options.batch_size);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(options.seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 shuffle_rng(epoch_seed);
    shuffle(order, shuffle_rng);

    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      Batch<Scalar> batch(end - start);
      std::vector<int> labels(end - start);
      parallel_for(end - start, [&](std::size_t k) {
        const std::size_t idx = order[start + k];
        Plane plane = train_planes[idx];
        if (options.augment) {
          SplitMix64 rng(derive_seed(epoch_seed, static_cast<std::uint64_t>(idx) + 1));
          augment_in_place(plane, *options.augment, rng);
        }
        normalize_in_place(plane, stats);
        batch[k] = to_feature_map<Scalar>(plane);
        labels[k] = train_labels[idx];
      });
      const ForwardPass<Scalar> pass = net.forward(batch, Mode::kTrain);
      auto [loss, dlogits] = softmax_xent(pass.logits, labels);
      net.backward(pass, dlogits);
      adam_step(net.parameters(), adam);
      net.invalidate_cache();
      loss_sum += loss * static_cast<double>(labels.size());
      correct += count_correct(pass.logits, labels);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(n);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (!val_norm.empty()) {
      const Matrix<double> probs = predict_proba(net, val_norm, options.batch_size);
      m.val_accuracy = static_cast<double>(count_correct(probs, val_labels)) / static_cast<double>(val_norm.size());
    }
    result.history.push_back(m);
    if (options.verbose) {
      std::cerr << "epoch " << epoch + 1 << "/" << options.epochs << " loss " << m.train_loss << " train_acc "
                << m.train_accuracy;
      if (m.val_accuracy) std::cerr << " val_acc " << *m.val_accuracy;
      std::cerr << "\n";
    }

    if (!m.val_accuracy) {
      result.best_epoch = epoch;
      continue;
    }
    if (*m.val_accuracy > best_acc) {
      best_acc = *m.val_accuracy;
      result.best_epoch = epoch;
      best.take(net);
    }
    if (options.stop_at_val_accuracy && *m.val_accuracy >= *options.stop_at_val_accuracy) break;
  }
  if (!val_norm.empty() && result.best_epoch >= 0) best.restore(net);
  return result;
}

#define CYTOCLASS_NN_INSTANTIATE(S)                                                                           \
  template class Conv2d<S>;                                                                                   \
  template class BatchNorm2d<S>;                                                                              \
  template class Bottleneck<S>;                                                                               \
  template class ResidualNetwork<S>;                                                                          \
  template Matrix<S> global_average_pool<S>(const Batch<S>&);                                                 \
  template Matrix<S> linear_head<S>(const Matrix<S>&, const Parameter<S>&, const Parameter<S>&);              \
  template std::pair<double, Matrix<S>> softmax_xent<S>(const Matrix<S>&, const std::vector<int>&);           \
  template Matrix<S> softmax_rows<S>(const Matrix<S>&);                                                       \
  template void adam_step<S>(const std::vector<Parameter<S>*>&, AdamState<S>&);                               \
  template FeatureMap<S> to_feature_map<S>(const Plane&);                                                     \
  template TrainResult train<S>(ResidualNetwork<S>&, const std::vector<Plane>&, const std::vector<int>&,      \
                                const std::vector<Plane>&, const std::vector<int>&, const ChannelStats&,      \
                                const TrainOptions&);                                                         \
  template Matrix<double> predict_proba<S>(const ResidualNetwork<S>&, const std::vector<Plane>&, int);

CYTOCLASS_NN_INSTANTIATE(float)
CYTOCLASS_NN_INSTANTIATE(double)
#undef CYTOCLASS_NN_INSTANTIATE

}  // namespace cytoclass::nn

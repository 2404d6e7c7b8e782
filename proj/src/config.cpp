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

#include "cytoclass/config.hpp"

#include <set>

#include "cytoclass/error.hpp"
#include "cytoclass/io.hpp"

namespace cytoclass {
namespace {

using nlohmann::json;

// Reads the members of one JSON object and complains about leftovers.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw Error(ErrorCode::kInvalidConfig, context_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw Error(ErrorCode::kInvalidConfig, context_ + key + ": wrong type");
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + context_ + key + "'");
    }
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

void read_preprocess(ObjectReader& r, PreprocessConfig& c) {
  r.get("resize_side", c.resize_side);
  r.get("crop_side", c.crop_side);
}

void read_hog(ObjectReader& r, HogConfig& c) {
  r.get("cell_size", c.cell_size);
  r.get("block_size", c.block_size);
  r.get("block_stride", c.block_stride);
  r.get("n_bins", c.n_bins);
  r.get("signed_gradients", c.signed_gradients);
  r.get("clip", c.clip);
}

void read_augment(ObjectReader& r, AugmentConfig& c) {
  r.get("h_flip_prob", c.h_flip_prob);
  r.get("v_flip_prob", c.v_flip_prob);
  r.get("noise_sigma", c.noise_sigma);
  r.get("contrast_low", c.contrast_low);
  r.get("contrast_high", c.contrast_high);
}

template <typename Fn>
void section(ObjectReader& parent, const std::string& key, const std::string& context, Fn&& fn) {
  if (const json* child = parent.child(key)) {
    ObjectReader r(*child, context + key + ".");
    fn(r);
    r.finish();
  }
}

}  // namespace

std::string kernel_name(KernelType k) { return k == KernelType::kRbf ? "rbf" : "linear"; }

KernelType parse_kernel(const std::string& name) {
  if (name == "rbf") return KernelType::kRbf;
  if (name == "linear") return KernelType::kLinear;
  throw Error(ErrorCode::kInvalidConfig, "unknown kernel '" + name + "' (expected rbf or linear)");
}

std::string weighting_name(KnnWeighting w) { return w == KnnWeighting::kMajority ? "majority" : "distance"; }

KnnWeighting parse_weighting(const std::string& name) {
  if (name == "majority") return KnnWeighting::kMajority;
  if (name == "distance") return KnnWeighting::kInverseDistance;
  throw Error(ErrorCode::kInvalidConfig, "unknown weighting '" + name + "' (expected majority or distance)");
}

json to_json(const PreprocessConfig& c) { return {{"resize_side", c.resize_side}, {"crop_side", c.crop_side}}; }

json to_json(const HogConfig& c) {
  return {{"cell_size", c.cell_size},   {"block_size", c.block_size},
          {"block_stride", c.block_stride}, {"n_bins", c.n_bins},
          {"signed_gradients", c.signed_gradients}, {"clip", c.clip}};
}

json to_json(const AugmentConfig& c) {
  return {{"h_flip_prob", c.h_flip_prob},   {"v_flip_prob", c.v_flip_prob},
          {"noise_sigma", c.noise_sigma},   {"contrast_low", c.contrast_low},
          {"contrast_high", c.contrast_high}};
}

json to_json(const ChannelStats& s) { return {{"mean", s.mean}, {"std", s.std}}; }

json to_json(const nn::NetConfig& c) {
  return {{"input_side", c.input_side},         {"input_channels", c.input_channels},
          {"stem_channels", c.stem_channels},   {"stage_blocks", c.stage_blocks},
          {"stage_channels", c.stage_channels}, {"n_classes", c.n_classes},
          {"bn_eps", c.bn_eps},                 {"bn_momentum", c.bn_momentum}};
}

json to_json(const RunConfig& c) {
  json j;
  j["data"] = c.data;
  j["seed"] = c.seed;
  j["preprocess"] = to_json(c.preprocess);
  j["hog"] = to_json(c.hog);
  j["augment"] = to_json(c.augment);
  j["knn"] = {{"k", c.knn.k ? json(*c.knn.k) : json(nullptr)}, {"weighting", weighting_name(c.knn.weighting)}};
  j["rf"] = {{"trees", c.rf.n_trees},
             {"max_features", c.rf.max_features},
             {"min_leaf", c.rf.min_leaf},
             {"max_depth", c.rf.max_depth},
             {"bootstrap", c.rf.bootstrap}};
  j["gbm"] = {{"rounds", c.gbm.n_rounds},
              {"max_depth", c.gbm.max_depth},
              {"lr", c.gbm.learning_rate},
              {"min_leaf", c.gbm.min_leaf}};
  j["svm"] = {{"C", c.svm.C},           {"kernel", kernel_name(c.svm.kernel)}, {"gamma", c.svm.gamma},
              {"tol", c.svm.tol},       {"max_passes", c.svm.max_passes},     {"max_sweeps", c.svm.max_sweeps}};
  j["resnet"] = {{"epochs", c.resnet.epochs},
                 {"batch_size", c.resnet.batch_size},
                 {"adam_lr", c.resnet.adam_lr},
                 {"precision", c.resnet.precision},
                 {"stem_channels", c.resnet.stem_channels},
                 {"stage_blocks", c.resnet.stage_blocks},
                 {"stage_channels", c.resnet.stage_channels},
                 {"augment", c.resnet.augment}};
  j["cache"] = c.cache;
  j["model"] = c.model;
  j["report"] = c.report;
  return j;
}

PreprocessConfig preprocess_from_json(const json& j) {
  PreprocessConfig c;
  ObjectReader r(j, "preprocess.");
  read_preprocess(r, c);
  r.finish();
  c.validate();
  return c;
}

HogConfig hog_from_json(const json& j) {
  HogConfig c;
  ObjectReader r(j, "hog.");
  read_hog(r, c);
  r.finish();
  c.validate();
  return c;
}

ChannelStats stats_from_json(const json& j) {
  ChannelStats s;
  ObjectReader r(j, "stats.");
  r.get("mean", s.mean);
  r.get("std", s.std);
  r.finish();
  return s;
}

nn::NetConfig net_config_from_json(const json& j) {
  nn::NetConfig c;
  ObjectReader r(j, "network.");
  r.get("input_side", c.input_side);
  r.get("input_channels", c.input_channels);
  r.get("stem_channels", c.stem_channels);
  r.get("stage_blocks", c.stage_blocks);
  r.get("stage_channels", c.stage_channels);
  r.get("n_classes", c.n_classes);
  r.get("bn_eps", c.bn_eps);
  r.get("bn_momentum", c.bn_momentum);
  r.finish();
  c.validate();
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  r.get("data", c.data);
  r.get("seed", c.seed);
  r.get("cache", c.cache);
  r.get("model", c.model);
  r.get("report", c.report);
  section(r, "preprocess", "", [&](ObjectReader& s) { read_preprocess(s, c.preprocess); });
  section(r, "hog", "", [&](ObjectReader& s) { read_hog(s, c.hog); });
  section(r, "augment", "", [&](ObjectReader& s) { read_augment(s, c.augment); });
  section(r, "knn", "", [&](ObjectReader& s) {
    if (const json* k = s.child("k"); k && !k->is_null()) {
      if (!k->is_number_integer()) throw Error(ErrorCode::kInvalidConfig, "knn.k: expected an integer or null");
      c.knn.k = k->get<int>();
    }
    std::string w = weighting_name(c.knn.weighting);
    s.get("weighting", w);
    c.knn.weighting = parse_weighting(w);
  });
  section(r, "rf", "", [&](ObjectReader& s) {
    s.get("trees", c.rf.n_trees);
    s.get("max_features", c.rf.max_features);
    s.get("min_leaf", c.rf.min_leaf);
    s.get("max_depth", c.rf.max_depth);
    s.get("bootstrap", c.rf.bootstrap);
  });
  section(r, "gbm", "", [&](ObjectReader& s) {
    s.get("rounds", c.gbm.n_rounds);
    s.get("max_depth", c.gbm.max_depth);
    s.get("lr", c.gbm.learning_rate);
    s.get("min_leaf", c.gbm.min_leaf);
  });
  section(r, "svm", "", [&](ObjectReader& s) {
    s.get("C", c.svm.C);
    std::string kernel = kernel_name(c.svm.kernel);
    s.get("kernel", kernel);
    c.svm.kernel = parse_kernel(kernel);
    s.get("gamma", c.svm.gamma);
    s.get("tol", c.svm.tol);
    s.get("max_passes", c.svm.max_passes);
    s.get("max_sweeps", c.svm.max_sweeps);
  });
  section(r, "resnet", "", [&](ObjectReader& s) {
    s.get("epochs", c.resnet.epochs);
    s.get("batch_size", c.resnet.batch_size);
    s.get("adam_lr", c.resnet.adam_lr);
    s.get("precision", c.resnet.precision);
    s.get("stem_channels", c.resnet.stem_channels);
    s.get("stage_blocks", c.resnet.stage_blocks);
    s.get("stage_channels", c.resnet.stage_channels);
    s.get("augment", c.resnet.augment);
  });
  r.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void RunConfig::validate() const {
  preprocess.validate();
  hog.validate();
  augment.validate();
  if (knn.k && *knn.k < 1) throw Error(ErrorCode::kInvalidConfig, "knn.k must be at least 1");
  if (rf.n_trees < 1 || rf.min_leaf < 1 || rf.max_features < 0 || rf.max_depth < 0) {
    throw Error(ErrorCode::kInvalidConfig, "rf settings out of range");
  }
  if (gbm.n_rounds < 1 || gbm.max_depth < 1 || gbm.min_leaf < 1 || !(gbm.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "gbm settings out of range");
  }
  if (!(svm.C > 0.0) || svm.gamma < 0.0 || !(svm.tol > 0.0) || svm.max_passes < 1 || svm.max_sweeps < 1) {
    throw Error(ErrorCode::kInvalidConfig, "svm settings out of range");
  }
  if (resnet.epochs < 0 || resnet.batch_size < 1 || !(resnet.adam_lr > 0.0) ||
      (resnet.precision != "double" && resnet.precision != "float")) {
    throw Error(ErrorCode::kInvalidConfig, "resnet settings out of range");
  }
}

}  // namespace cytoclass

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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cytoclass/dataset.hpp"
#include "cytoclass/ensemble.hpp"
#include "cytoclass/hog.hpp"
#include "cytoclass/knn.hpp"
#include "cytoclass/resnet.hpp"
#include "cytoclass/svm.hpp"

namespace cytoclass {

struct KnnParams {
  std::optional<int> k;  // empty: chosen on the validation split
  KnnWeighting weighting = KnnWeighting::kMajority;
};

struct SvmParams {
  double C = 1.0;
  KernelType kernel = KernelType::kRbf;
  double gamma = 0.0;  // 0: 1 / n_features
  double tol = 1e-3;
  int max_passes = 5;
  int max_sweeps = 20'000;
};

struct ResnetParams {
  int epochs = 500;
  int batch_size = 32;
  double adam_lr = 1e-3;
  std::string precision = "double";  // or "float"
  int stem_channels = 16;
  std::vector<int> stage_blocks = {1, 1, 1};
  std::vector<int> stage_channels = {32, 64, 128};
  bool augment = true;
};

/// Everything a subcommand may read. Unknown keys in a config file are
/// rejected; command-line flags override file values.
struct RunConfig {
  std::string data;
  std::uint64_t seed = 42;
  PreprocessConfig preprocess;
  HogConfig hog;
  AugmentConfig augment;
  KnnParams knn;
  ForestConfig rf;
  BoostingConfig gbm;
  SvmParams svm;
  ResnetParams resnet;
  std::string cache;
  std::string model;
  std::string report;

  void validate() const;
};

nlohmann::json to_json(const PreprocessConfig& c);
nlohmann::json to_json(const HogConfig& c);
nlohmann::json to_json(const AugmentConfig& c);
nlohmann::json to_json(const ChannelStats& s);
nlohmann::json to_json(const nn::NetConfig& c);
nlohmann::json to_json(const RunConfig& c);

PreprocessConfig preprocess_from_json(const nlohmann::json& j);
HogConfig hog_from_json(const nlohmann::json& j);
ChannelStats stats_from_json(const nlohmann::json& j);
nn::NetConfig net_config_from_json(const nlohmann::json& j);
/// Missing keys keep their defaults; unknown keys throw InvalidConfig.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::string kernel_name(KernelType k);
KernelType parse_kernel(const std::string& name);
std::string weighting_name(KnnWeighting w);
KnnWeighting parse_weighting(const std::string& name);

}  // namespace cytoclass

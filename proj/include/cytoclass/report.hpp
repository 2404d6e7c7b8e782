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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cytoclass/dataset.hpp"
#include "cytoclass/metrics.hpp"

namespace cytoclass {

struct EvaluationReport {
  std::string model_type;
  std::string split;
  ClassNames class_names = cytoclass::class_names();
  std::vector<int> y_true;
  std::vector<int> y_pred;
  Eigen::MatrixXd scores;  // one row per example
  ConfusionMatrix confusion;
  std::vector<std::optional<RocCurve>> roc;  // empty for classes lacking positives or negatives
};

/// Argmax predictions, confusion matrix and per-class ROC from score rows.
EvaluationReport build_report(const std::vector<int>& y_true, const Eigen::MatrixXd& scores);

std::string confusion_csv(const ConfusionMatrix& cm, const ClassNames& names);
std::string confusion_normalized_csv(const ConfusionMatrix& cm, const ClassNames& names);
std::string roc_csv(const RocCurve& curve);
nlohmann::json metrics_json(const EvaluationReport& report);
std::string confusion_svg(const ConfusionMatrix& cm, const ClassNames& names);
std::string roc_svg(const EvaluationReport& report);

/// confusion.csv, confusion_normalized.csv, roc_class<k>.csv, metrics.json,
/// confusion.svg and roc.svg under `dir` (created if needed).
void write_report(const EvaluationReport& report, const std::filesystem::path& dir);

}  // namespace cytoclass

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

#include "cytoclass/report.hpp"

#include <cstdio>

#include "cytoclass/classify.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/io.hpp"

namespace cytoclass {
namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Fixed two-decimal coordinates keep the SVG text stable and compact.
std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2"};

}  // namespace

EvaluationReport build_report(const std::vector<int>& y_true, const Eigen::MatrixXd& scores) {
  if (static_cast<Eigen::Index>(y_true.size()) != scores.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "one score row per label required");
  }
  EvaluationReport r;
  r.y_true = y_true;
  r.scores = scores;
  r.y_pred.resize(y_true.size());
  for (std::size_t i = 0; i < y_true.size(); ++i) r.y_pred[i] = argmax(scores.row(static_cast<Eigen::Index>(i)));
  r.confusion = confusion_matrix(r.y_true, r.y_pred, static_cast<int>(scores.cols()));
  for (int c = 0; c < scores.cols(); ++c) {
    try {
      r.roc.push_back(roc_curve_ovr(r.y_true, scores, c));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateClass) throw;
      r.roc.push_back(std::nullopt);
    }
  }
  return r;
}

std::string confusion_csv(const ConfusionMatrix& cm, const ClassNames& names) {
  std::string out = "true\\predicted";
  for (int c = 0; c < cm.n_classes(); ++c) out += "," + names[static_cast<std::size_t>(c)];
  out += "\n";
  for (int t = 0; t < cm.n_classes(); ++t) {
    out += names[static_cast<std::size_t>(t)];
    for (int p = 0; p < cm.n_classes(); ++p) out += "," + std::to_string(cm.counts(t, p));
    out += "\n";
  }
  return out;
}

std::string confusion_normalized_csv(const ConfusionMatrix& cm, const ClassNames& names) {
  const Eigen::MatrixXd norm = cm.normalized();
  std::string out = "true\\predicted";
  for (int c = 0; c < cm.n_classes(); ++c) out += "," + names[static_cast<std::size_t>(c)];
  out += "\n";
  for (int t = 0; t < cm.n_classes(); ++t) {
    out += names[static_cast<std::size_t>(t)];
    for (int p = 0; p < cm.n_classes(); ++p) out += "," + format_real(norm(t, p));
    out += "\n";
  }
  return out;
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "fpr,tpr\n";
  for (const auto& [fpr, tpr] : curve.points) out += format_real(fpr) + "," + format_real(tpr) + "\n";
  return out;
}

nlohmann::json metrics_json(const EvaluationReport& r) {
  using nlohmann::json;
  json j;
  j["model_type"] = r.model_type;
  j["split"] = r.split;
  j["n_examples"] = r.y_true.size();
  j["accuracy"] = accuracy(r.confusion);
  j["class_names"] = std::vector<std::string>(r.class_names.begin(), r.class_names.end());
  json recall = json::array();
  for (const auto& v : per_class_recall(r.confusion)) recall.push_back(v ? json(*v) : json(nullptr));
  j["per_class_recall"] = recall;
  json auc = json::array();
  for (const auto& c : r.roc) auc.push_back(c ? json(c->auc) : json(nullptr));
  j["per_class_auc"] = auc;
  json counts = json::array();
  for (int t = 0; t < r.confusion.n_classes(); ++t) {
    json row = json::array();
    for (int p = 0; p < r.confusion.n_classes(); ++p) row.push_back(r.confusion.counts(t, p));
    counts.push_back(row);
  }
  j["confusion"] = counts;
  return j;
}

std::string confusion_svg(const ConfusionMatrix& cm, const ClassNames& names) {
  const int n = cm.n_classes();
  const double cell = 70.0, left = 190.0, top = 60.0;
  const double width = left + n * cell + 20.0, height = top + n * cell + 170.0;
  const Eigen::MatrixXd norm = cm.normalized();
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(width) + "\" height=\"" + coord(height) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + coord(width) + "\" height=\"" + coord(height) + "\" fill=\"white\"/>\n";
  s += "<text x=\"" + coord(left + n * cell / 2) + "\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">Confusion matrix</text>\n";
  for (int t = 0; t < n; ++t) {
    for (int p = 0; p < n; ++p) {
      const double v = norm(t, p);
      const int shade = static_cast<int>(255.0 - 200.0 * v);
      const double x = left + p * cell, y = top + t * cell;
      char fill[16];
      std::snprintf(fill, sizeof fill, "#%02x%02xff", shade, shade);
      s += "<rect x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" width=\"" + coord(cell) + "\" height=\"" +
           coord(cell) + "\" fill=\"" + fill + "\" stroke=\"#444\"/>\n";
      s += "<text x=\"" + coord(x + cell / 2) + "\" y=\"" + coord(y + cell / 2 + 4) + "\" text-anchor=\"middle\"" +
           (v > 0.6 ? " fill=\"white\"" : "") + ">" + std::to_string(cm.counts(t, p)) + "</text>\n";
    }
    s += "<text x=\"" + coord(left - 8) + "\" y=\"" + coord(top + t * cell + cell / 2 + 4) + "\" text-anchor=\"end\">" +
         xml_escape(names[static_cast<std::size_t>(t)]) + "</text>\n";
  }
  for (int p = 0; p < n; ++p) {
    const double x = left + p * cell + cell / 2, y = top + n * cell + 12;
    s += "<text x=\"" + coord(x) + "\" y=\"" + coord(y) + "\" text-anchor=\"end\" transform=\"rotate(-45 " +
         coord(x) + " " + coord(y) + ")\">" + xml_escape(names[static_cast<std::size_t>(p)]) + "</text>\n";
  }
  s += "<text x=\"" + coord(left + n * cell / 2) + "\" y=\"" + coord(height - 10) +
       "\" text-anchor=\"middle\">Predicted class</text>\n";
  s += "<text x=\"16\" y=\"" + coord(top + n * cell / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       coord(top + n * cell / 2) + ")\">True class</text>\n";
  s += "</svg>\n";
  return s;
}

std::string roc_svg(const EvaluationReport& r) {
  const double left = 60.0, top = 40.0, size = 400.0, legend = 250.0;
  const double width = left + size + legend, height = top + size + 60.0;
  auto px = [&](double fpr) { return left + fpr * size; };
  auto py = [&](double tpr) { return top + (1.0 - tpr) * size; };
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(width) + "\" height=\"" + coord(height) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + coord(width) + "\" height=\"" + coord(height) + "\" fill=\"white\"/>\n";
  s += "<text x=\"" + coord(left + size / 2) + "\" y=\"25\" text-anchor=\"middle\" font-size=\"16\">ROC (one vs rest)</text>\n";
  s += "<rect x=\"" + coord(left) + "\" y=\"" + coord(top) + "\" width=\"" + coord(size) + "\" height=\"" + coord(size) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";
  s += "<line x1=\"" + coord(px(0)) + "\" y1=\"" + coord(py(0)) + "\" x2=\"" + coord(px(1)) + "\" y2=\"" + coord(py(1)) +
       "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick / 4.0;
    s += "<text x=\"" + coord(px(v)) + "\" y=\"" + coord(top + size + 16) + "\" text-anchor=\"middle\">" +
         format_real(v) + "</text>\n";
    s += "<text x=\"" + coord(left - 6) + "\" y=\"" + coord(py(v) + 4) + "\" text-anchor=\"end\">" + format_real(v) +
         "</text>\n";
  }
  s += "<text x=\"" + coord(left + size / 2) + "\" y=\"" + coord(height - 12) +
       "\" text-anchor=\"middle\">False positive rate</text>\n";
  s += "<text x=\"16\" y=\"" + coord(top + size / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       coord(top + size / 2) + ")\">True positive rate</text>\n";
  int row = 0;
  for (std::size_t c = 0; c < r.roc.size(); ++c) {
    if (!r.roc[c]) continue;
    const char* color = kPalette[c % std::size(kPalette)];
    std::string d;
    for (std::size_t i = 0; i < r.roc[c]->points.size(); ++i) {
      const auto& [fpr, tpr] = r.roc[c]->points[i];
      d += (i == 0 ? "M" : " L") + coord(px(fpr)) + " " + coord(py(tpr));
    }
    s += "<path d=\"" + d + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    const double ly = top + 10 + row * 20;
    s += "<line x1=\"" + coord(left + size + 15) + "\" y1=\"" + coord(ly) + "\" x2=\"" + coord(left + size + 35) +
         "\" y2=\"" + coord(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    char auc[32];
    std::snprintf(auc, sizeof auc, "%.3f", r.roc[c]->auc);
    s += "<text x=\"" + coord(left + size + 40) + "\" y=\"" + coord(ly + 4) + "\">" +
         xml_escape(r.class_names[c]) + " (AUC " + auc + ")</text>\n";
    ++row;
  }
  s += "</svg>\n";
  return s;
}

void write_report(const EvaluationReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  write_file_atomic(dir / "confusion.csv", confusion_csv(r.confusion, r.class_names));
  write_file_atomic(dir / "confusion_normalized.csv", confusion_normalized_csv(r.confusion, r.class_names));
  for (std::size_t c = 0; c < r.roc.size(); ++c) {
    if (r.roc[c]) write_file_atomic(dir / ("roc_class" + std::to_string(c) + ".csv"), roc_csv(*r.roc[c]));
  }
  write_file_atomic(dir / "metrics.json", metrics_json(r).dump(2) + "\n");
  write_file_atomic(dir / "confusion.svg", confusion_svg(r.confusion, r.class_names));
  write_file_atomic(dir / "roc.svg", roc_svg(r));
}

}  // namespace cytoclass

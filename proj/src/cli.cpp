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

#include "cytoclass/cli.hpp"

#include <functional>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cytoclass/classify.hpp"
#include "cytoclass/config.hpp"
#include "cytoclass/dataset.hpp"
#include "cytoclass/error.hpp"
#include "cytoclass/hog.hpp"
#include "cytoclass/io.hpp"
#include "cytoclass/model_store.hpp"
#include "cytoclass/parallel.hpp"
#include "cytoclass/report.hpp"

namespace cytoclass {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Failure with a fixed exit status, independent of the library error code.
struct CliFailure {
  int code;
  std::string message;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kInvalidConfig:
      return kExitUsage;
    case ErrorCode::kIoError:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kChecksumFailure:
    case ErrorCode::kTruncatedFile:
    case ErrorCode::kStaleCache:
      return kExitModel;
    default:
      return kExitData;
  }
}

// Errors raised while reading a model or cache file count as file errors.
template <typename Fn>
auto as_file_error(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw CliFailure{kExitModel, what + ": " + e.what()};
  }
}

void log_run(const fs::path& path, const std::string& subcommand, const RunConfig& cfg, json extra = json::object()) {
  json j;
  j["subcommand"] = subcommand;
  j["seed"] = cfg.seed;
  j["config"] = to_json(cfg);
  if (!extra.empty()) j["inputs"] = std::move(extra);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
}

fs::path sibling_log(const fs::path& out) { return out.parent_path() / (out.filename().string() + ".run_config.json"); }

// --data, else the dataset root recorded by the split that wrote the
// manifest, else the manifest's directory.
fs::path data_root(const RunConfig& cfg, const fs::path& manifest) {
  if (!cfg.data.empty()) return cfg.data;
  const fs::path log = sibling_log(manifest);
  if (fs::exists(log)) {
    try {
      const json j = json::parse(read_text_file(log));
      if (j.contains("inputs") && j["inputs"].contains("data_root")) return j["inputs"]["data_root"].get<std::string>();
    } catch (const json::exception&) {
      // Unreadable logs fall through to the manifest directory.
    }
  }
  const fs::path parent = manifest.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

SplitManifest subset_manifest(const SplitManifest& m, const std::vector<std::size_t>& idx) {
  SplitManifest s;
  s.seed = m.seed;
  for (const auto i : idx) s.records.push_back(m.records[i]);
  return s;
}

std::vector<int> labels_of(const SplitManifest& m, const std::vector<std::size_t>& idx) {
  std::vector<int> y;
  for (const auto i : idx) y.push_back(m.records[i].class_id);
  return y;
}

std::vector<Plane> load_planes(const fs::path& root, const SplitManifest& m, const std::vector<std::size_t>& idx,
                               const PreprocessConfig& pre) {
  std::vector<Plane> planes(idx.size());
  parallel_for(idx.size(), [&](std::size_t k) { planes[k] = load_unit_plane(root / m.records[idx[k]].path, pre); });
  return planes;
}

// Feature rows for the listed records, from the cache when one is given.
FeatureMatrix features_for(const RunConfig& cfg, const fs::path& root, const SplitManifest& m,
                           const std::vector<std::size_t>& idx, const PreprocessConfig& pre, const HogConfig& hog,
                           const std::string& cache) {
  if (cache.empty()) return extract_features(root, subset_manifest(m, idx), pre, hog);
  const auto cols = static_cast<Eigen::Index>(hog_feature_len(hog, pre.crop_side, pre.crop_side));
  const FeatureMatrix all = as_file_error(cache, [&] { return read_feature_cache(cache, cols); });
  if (all.rows() != static_cast<Eigen::Index>(m.records.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "cache " + cache + " has " + std::to_string(all.rows()) +
                                                   " rows but the manifest lists " + std::to_string(m.records.size()));
  }
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (all.labels[i] != m.records[i].class_id) {
      throw Error(ErrorCode::kDimensionMismatch, "cache " + cache + " labels disagree with the manifest");
    }
  }
  (void)cfg;
  return all.subset(idx);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cervical cell image classification pipeline", "cytoclass"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  RunConfig d;  // flag storage, initialised to the defaults shown in --help
  std::string config_path;
  std::optional<int> threads;

  // Options whose explicit use overrides the config file.
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> overrides;
  auto bind = [&](CLI::App* sub, const std::string& name, auto field, const std::string& help) {
    CLI::Option* opt = sub->add_option(name, field(d), help);
    overrides.emplace_back(opt, [field, &d](RunConfig& dst) { field(dst) = field(d); });
    return opt;
  };
#define CYTOCLASS_FIELD(member) [](RunConfig& c) -> auto& { return c.member; }

  std::string out_path, manifest_path, model_path, model_type, split_name_arg = "test", image_path, kernel = "rbf",
                                                                weighting = "majority";
  int per_class = 60;
  int k_flag = 0;
  bool no_augment = false, verbose = false;

  CLI::App* split = app.add_subcommand("split", "Scan a dataset and write a stratified 8:1:1 split manifest");
  bind(split, "--data", CYTOCLASS_FIELD(data), "Dataset root with one directory per class");
  bind(split, "--seed", CYTOCLASS_FIELD(seed), "Split seed");
  split->add_option("--out", out_path, "Manifest CSV to write")->required();

  CLI::App* features = app.add_subcommand("features", "Extract HOG features for every manifest record");
  features->add_option("--manifest", manifest_path, "Split manifest CSV")->required();
  features->add_option("--out", out_path, "Feature cache to write")->required();
  bind(features, "--data", CYTOCLASS_FIELD(data), "Dataset root (default: the root recorded by split, else the manifest's directory)");

  CLI::App* train = app.add_subcommand("train", "Train one model family on the train split");
  train->add_option("--model", model_type, "Model family")
      ->required()
      ->check(CLI::IsMember({"knn", "rf", "gbm", "svm", "resnet"}));
  train->add_option("--manifest", manifest_path, "Split manifest CSV")->required();
  train->add_option("--out", out_path, "Model file to write")->required();
  bind(train, "--cache", CYTOCLASS_FIELD(cache), "Feature cache from `features` (classical models)");
  bind(train, "--data", CYTOCLASS_FIELD(data), "Dataset root (default: the root recorded by split, else the manifest's directory)");
  bind(train, "--seed", CYTOCLASS_FIELD(seed), "Training seed");
  CLI::Option* k_opt = train->add_option("--k", k_flag, "kNN neighbours (default: chosen on the val split)")
                           ->check(CLI::PositiveNumber)
                           ->default_str("auto");
  CLI::Option* weighting_opt =
      train->add_option("--weighting", weighting, "kNN voting")->check(CLI::IsMember({"majority", "distance"}));
  bind(train, "--trees", CYTOCLASS_FIELD(rf.n_trees), "Random forest trees");
  bind(train, "--max-features", CYTOCLASS_FIELD(rf.max_features), "Random forest features per split (0: sqrt)");
  bind(train, "--rounds", CYTOCLASS_FIELD(gbm.n_rounds), "Boosting rounds");
  bind(train, "--lr", CYTOCLASS_FIELD(gbm.learning_rate), "Boosting learning rate");
  bind(train, "--depth", CYTOCLASS_FIELD(gbm.max_depth), "Boosting tree depth");
  bind(train, "--C", CYTOCLASS_FIELD(svm.C), "SVM box constraint");
  CLI::Option* kernel_opt =
      train->add_option("--kernel", kernel, "SVM kernel")->check(CLI::IsMember({"rbf", "linear"}));
  bind(train, "--gamma", CYTOCLASS_FIELD(svm.gamma), "RBF width (0: 1 / n_features)");
  bind(train, "--epochs", CYTOCLASS_FIELD(resnet.epochs), "Network training epochs");
  bind(train, "--batch-size", CYTOCLASS_FIELD(resnet.batch_size), "Network mini-batch size");
  bind(train, "--adam-lr", CYTOCLASS_FIELD(resnet.adam_lr), "Adam learning rate");
  bind(train, "--precision", CYTOCLASS_FIELD(resnet.precision), "Network arithmetic")
      ->check(CLI::IsMember({"double", "float"}));
  CLI::Option* no_augment_opt = train->add_flag("--no-augment", no_augment, "Disable training augmentation");
  train->add_flag("--verbose", verbose, "Print per-epoch network metrics");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a model on one split and write a report");
  eval->add_option("--model", model_path, "Model file")->required();
  eval->add_option("--manifest", manifest_path, "Split manifest CSV")->required();
  eval->add_option("--split", split_name_arg, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", out_path, "Report directory")->required();
  bind(eval, "--cache", CYTOCLASS_FIELD(cache), "Feature cache from `features` (classical models)");
  bind(eval, "--data", CYTOCLASS_FIELD(data), "Dataset root (default: the root recorded by split, else the manifest's directory)");

  CLI::App* predict = app.add_subcommand("predict", "Classify one image");
  predict->add_option("--model", model_path, "Model file")->required();
  predict->add_option("--image", image_path, "BMP or PNG image")->required();

  CLI::App* fixture = app.add_subcommand("fixture", "Write a synthetic five-class image dataset");
  fixture->add_option("--out", out_path, "Output directory")->required();
  fixture->add_option("--per-class", per_class, "Images per class")->check(CLI::PositiveNumber);
  bind(fixture, "--seed", CYTOCLASS_FIELD(seed), "Generator seed");

#undef CYTOCLASS_FIELD

  for (CLI::App* sub : {split, features, train, eval, predict, fixture}) {
    sub->add_option("--config", config_path, "JSON run configuration; flags override its values");
    sub->add_option("--threads", threads, "Worker threads (default: CYTOCLASS_THREADS, else all cores)")
        ->check(CLI::PositiveNumber);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (threads) set_thread_count(*threads);
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    for (const auto& [opt, apply] : overrides) {
      if (opt->count() > 0) apply(cfg);
    }
    if (k_opt->count() > 0) cfg.knn.k = k_flag;
    if (weighting_opt->count() > 0) cfg.knn.weighting = parse_weighting(weighting);
    if (kernel_opt->count() > 0) cfg.svm.kernel = parse_kernel(kernel);
    if (no_augment_opt->count() > 0) cfg.resnet.augment = false;
    cfg.validate();

    if (split->parsed()) {
      if (cfg.data.empty()) throw CliFailure{kExitUsage, "split: --data is required"};
      const DatasetManifest m = scan_dataset(cfg.data);
      const SplitManifest s = stratified_split(m, cfg.seed);
      write_split_csv(s, out_path);
      log_run(sibling_log(out_path), "split", cfg, {{"data_root", fs::absolute(cfg.data).lexically_normal().string()}});
      out << "wrote " << s.records.size() << " records to " << out_path << " (train "
          << s.indices(Split::kTrain).size() << ", val " << s.indices(Split::kVal).size() << ", test "
          << s.indices(Split::kTest).size() << ")\n";
    } else if (features->parsed()) {
      const SplitManifest s = read_split_csv(manifest_path);
      const FeatureMatrix f = extract_features(data_root(cfg, manifest_path), s, cfg.preprocess, cfg.hog);
      write_feature_cache(out_path, f);
      log_run(sibling_log(out_path), "features", cfg, {{"manifest", manifest_path}});
      out << "wrote " << f.rows() << " x " << f.cols() << " features to " << out_path << "\n";
    } else if (train->parsed()) {
      const SplitManifest s = read_split_csv(manifest_path);
      const fs::path root = data_root(cfg, manifest_path);
      const auto train_idx = s.indices(Split::kTrain);
      const auto val_idx = s.indices(Split::kVal);
      StoredModel stored;
      stored.seed = cfg.seed;
      stored.pipeline.preprocess = cfg.preprocess;
      stored.pipeline.hog = cfg.hog;
      if (model_type == "resnet") {
        const auto train_planes = load_planes(root, s, train_idx, cfg.preprocess);
        const auto val_planes = load_planes(root, s, val_idx, cfg.preprocess);
        stored.pipeline.stats = compute_channel_stats(train_planes);
        nn::NetConfig net_cfg;
        net_cfg.input_side = cfg.preprocess.crop_side;
        net_cfg.stem_channels = cfg.resnet.stem_channels;
        net_cfg.stage_blocks = cfg.resnet.stage_blocks;
        net_cfg.stage_channels = cfg.resnet.stage_channels;
        nn::TrainOptions opts;
        opts.epochs = cfg.resnet.epochs;
        opts.batch_size = cfg.resnet.batch_size;
        opts.adam.lr = cfg.resnet.adam_lr;
        opts.seed = cfg.seed;
        if (cfg.resnet.augment) opts.augment = cfg.augment;
        opts.verbose = verbose;
        auto run = [&](auto& net) {
          const nn::TrainResult r = nn::train(net, train_planes, labels_of(s, train_idx), val_planes,
                                              labels_of(s, val_idx), stored.pipeline.stats, opts);
          stored.config["epochs"] = cfg.resnet.epochs;
          stored.config["epochs_run"] = r.history.size();
          stored.config["best_epoch"] = r.best_epoch;
          stored.config["batch_size"] = cfg.resnet.batch_size;
          stored.config["adam_lr"] = cfg.resnet.adam_lr;
          stored.config["augment"] = cfg.resnet.augment ? to_json(cfg.augment) : json(nullptr);
          if (r.best_epoch >= 0 && r.history[static_cast<std::size_t>(r.best_epoch)].val_accuracy) {
            out << "best epoch " << r.best_epoch + 1 << " val accuracy "
                << format_real(*r.history[static_cast<std::size_t>(r.best_epoch)].val_accuracy) << "\n";
          }
        };
        if (cfg.resnet.precision == "float") {
          nn::ResidualNetwork<float> net(net_cfg, cfg.seed);
          run(net);
          stored.model = std::move(net);
        } else {
          nn::ResidualNetwork<double> net(net_cfg, cfg.seed);
          run(net);
          stored.model = std::move(net);
        }
      } else {
        const FeatureMatrix tr = features_for(cfg, root, s, train_idx, cfg.preprocess, cfg.hog, cfg.cache);
        if (model_type == "knn") {
          KnnModel m;
          m.weighting = cfg.knn.weighting;
          if (cfg.knn.k) {
            m.k = *cfg.knn.k;
          } else {
            const FeatureMatrix val = features_for(cfg, root, s, val_idx, cfg.preprocess, cfg.hog, cfg.cache);
            m.k = select_k(tr, val, default_k_candidates(), cfg.knn.weighting);
            out << "selected k = " << m.k << " on the val split\n";
          }
          m.train = tr;
          m.validate();
          stored.model = std::move(m);
        } else if (model_type == "rf") {
          stored.model = rf_fit(tr, cfg.rf, cfg.seed);
        } else if (model_type == "gbm") {
          stored.model = gbm_fit(tr, cfg.gbm);
        } else {
          SmoConfig smo;
          smo.C = cfg.svm.C;
          smo.tol = cfg.svm.tol;
          smo.max_passes = cfg.svm.max_passes;
          smo.max_sweeps = cfg.svm.max_sweeps;
          smo.seed = cfg.seed;
          MultiSvm m = ovr_fit(tr, Kernel{cfg.svm.kernel, cfg.svm.gamma}, smo);
          for (std::size_t c = 0; c < m.machines.size(); ++c) {
            if (!m.machines[c].converged) {
              err << "warning: svm machine " << c << " finished with KKT violations above tol (max "
                  << m.machines[c].max_kkt_violation << ")\n";
            }
          }
          stored.model = std::move(m);
        }
      }
      save_model(out_path, stored);
      log_run(sibling_log(out_path), "train", cfg, {{"model", model_type}, {"manifest", manifest_path}});
      out << "saved " << model_type << " model to " << out_path << "\n";
    } else if (eval->parsed()) {
      const StoredModel model = as_file_error(model_path, [&] { return load_model(model_path); });
      const SplitManifest s = read_split_csv(manifest_path);
      const fs::path root = data_root(cfg, manifest_path);
      const auto idx = s.indices(parse_split(split_name_arg));
      if (idx.empty()) throw Error(ErrorCode::kEmptyDataset, "split '" + split_name_arg + "' has no records");
      Eigen::MatrixXd scores;
      if (model.uses_images()) {
        scores = predict_plane_scores(model, load_planes(root, s, idx, model.pipeline.preprocess));
      } else {
        const FeatureMatrix f =
            features_for(cfg, root, s, idx, model.pipeline.preprocess, model.pipeline.hog, cfg.cache);
        scores = predict_feature_scores(model, f.values);
      }
      EvaluationReport report = build_report(labels_of(s, idx), scores);
      report.model_type = model.model_type();
      report.split = split_name_arg;
      write_report(report, out_path);
      log_run(fs::path(out_path) / "run_config.json", "eval", cfg,
              {{"model", model_path}, {"manifest", manifest_path}, {"split", split_name_arg}, {"model_seed", model.seed}});
      out << "accuracy: " << format_real(accuracy(report.confusion)) << "\n";
      const auto recall = per_class_recall(report.confusion);
      for (std::size_t c = 0; c < recall.size(); ++c) {
        out << "  " << report.class_names[c] << " recall: " << (recall[c] ? format_real(*recall[c]) : "n/a") << "\n";
      }
    } else if (predict->parsed()) {
      const StoredModel model = as_file_error(model_path, [&] { return load_model(model_path); });
      const Plane plane = load_unit_plane(image_path, model.pipeline.preprocess);
      Eigen::MatrixXd scores;
      if (model.uses_images()) {
        scores = predict_plane_scores(model, {plane});
      } else {
        const Eigen::VectorXd h = extract_hog(plane, model.pipeline.hog);
        scores = predict_feature_scores(model, RowMatrix(h.transpose()));
      }
      const Eigen::VectorXd row = scores.row(0).transpose();
      out << class_names()[static_cast<std::size_t>(argmax(row))] << "\n";
      for (Eigen::Index c = 0; c < row.size(); ++c) out << (c ? " " : "") << format_real(row(c));
      out << "\n";
    } else if (fixture->parsed()) {
      const DatasetManifest m = generate_fixture_dataset(out_path, per_class, cfg.seed);
      log_run(fs::path(out_path) / "run_config.json", "fixture", cfg, {{"per_class", per_class}});
      out << "wrote " << m.records.size() << " images to " << out_path << "\n";
    }
  } catch (const CliFailure& f) {
    err << "error: " << f.message << "\n";
    return f.code;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitModel;
  }
  return kExitOk;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace cytoclass

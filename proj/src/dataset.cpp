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

#include "cytoclass/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cytoclass/error.hpp"
#include "cytoclass/io.hpp"

namespace cytoclass {
namespace fs = std::filesystem;

const ClassNames& class_names() {
  static const ClassNames names = {"Koilocytotic", "Dyskeratotic", "Metaplastic", "Parabasal",
                                   "Superficial-Intermediate"};
  return names;
}

const ClassNames& default_class_dirs() {
  static const ClassNames dirs = {"im_Koilocytotic", "im_Dyskeratotic", "im_Metaplastic", "im_Parabasal",
                                  "im_Superficial-Intermediate"};
  return dirs;
}

std::array<std::size_t, kNumClasses> DatasetManifest::class_counts() const {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.class_id)];
  return counts;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw Error(ErrorCode::kInvalidArgument, "unknown split '" + std::string(name) + "'");
}

std::vector<std::size_t> SplitManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].split == s) out.push_back(i);
  }
  return out;
}

void PreprocessConfig::validate() const {
  if (crop_side < 1 || resize_side < crop_side) {
    throw Error(ErrorCode::kInvalidConfig, "preprocessing requires 1 <= crop_side <= resize_side");
  }
}

void AugmentConfig::validate() const {
  auto is_prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!is_prob(h_flip_prob) || !is_prob(v_flip_prob)) {
    throw Error(ErrorCode::kInvalidConfig, "flip probabilities must lie in [0, 1]");
  }
  if (!(contrast_low > 0.0) || contrast_high < contrast_low) {
    throw Error(ErrorCode::kInvalidConfig, "contrast range must satisfy 0 < low <= high");
  }
  if (noise_sigma < 0.0) throw Error(ErrorCode::kInvalidConfig, "noise_sigma must be non-negative");
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".bmp" || ext == ".png";
}

bool under_cropped_dir(const fs::path& file, const fs::path& class_dir) {
  for (const auto& part : fs::relative(file.parent_path(), class_dir)) {
    std::string name = part.string();
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return std::toupper(ch); });
    if (name == "CROPPED") return true;
  }
  return false;
}

}  // namespace

DatasetManifest scan_dataset(const fs::path& root, const ClassNames& class_dirs) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::kIoError, "dataset root not found: " + root.string());
  DatasetManifest manifest;
  manifest.root = root;
  for (int c = 0; c < kNumClasses; ++c) {
    const fs::path dir = root / class_dirs[c];
    if (!fs::is_directory(dir)) {
      throw Error(ErrorCode::kMissingClassDirectory, "missing class directory " + dir.string());
    }
    std::vector<fs::path> cropped, other;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
      (under_cropped_dir(entry.path(), dir) ? cropped : other).push_back(entry.path());
    }
    // The published archive keeps the isolated cells under CROPPED/ next to
    // the whole cluster images; only the cells are examples.
    for (const auto& p : cropped.empty() ? other : cropped) {
      manifest.records.push_back({fs::relative(p, root).generic_string(), c});
    }
  }
  if (manifest.records.empty()) throw Error(ErrorCode::kEmptyDataset, "no images under " + root.string());
  std::sort(manifest.records.begin(), manifest.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.path < b.path; });
  return manifest;
}

SplitManifest stratified_split(const DatasetManifest& manifest, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumClasses> members;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const int c = manifest.records[i].class_id;
    if (c < 0 || c >= kNumClasses) throw Error(ErrorCode::kLabelOutOfRange, "class id out of range");
    members[static_cast<std::size_t>(c)].push_back(i);
  }

  SplitManifest split;
  split.seed = seed;
  split.records.reserve(manifest.records.size());
  for (const auto& r : manifest.records) split.records.push_back({r.path, r.class_id, Split::kTrain});

  for (int c = 0; c < kNumClasses; ++c) {
    auto& idx = members[static_cast<std::size_t>(c)];
    if (idx.size() < 3) {
      throw Error(ErrorCode::kClassTooSmall, "class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                                 " records, need at least 3");
    }
    SplitMix64 rng(splitmix64(seed ^ static_cast<std::uint64_t>(c)));
    shuffle(idx, rng);
    const std::size_t held_out = idx.size() / 10;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Split s = Split::kTrain;
      if (k < held_out) {
        s = Split::kTest;
      } else if (k < 2 * held_out) {
        s = Split::kVal;
      }
      split.records[idx[k]].split = s;
    }
  }
  return split;
}

std::string split_csv_string(const SplitManifest& split) {
  std::string out = "path,class_id,split\n";
  for (const auto& r : split.records) {
    if (r.path.find_first_of(",\n\r\"") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "path not representable in manifest CSV: " + r.path);
    }
    out += r.path;
    out += ',';
    out += std::to_string(r.class_id);
    out += ',';
    out += split_name(r.split);
    out += '\n';
  }
  return out;
}

void write_split_csv(const SplitManifest& split, const fs::path& path) {
  write_file_atomic(path, split_csv_string(split));
}

SplitManifest read_split_csv(const fs::path& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "path,class_id,split") {
    throw Error(ErrorCode::kCorruptFile, path.string() + ": expected header 'path,class_id,split'");
  }
  SplitManifest split;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto first = line.find(',');
    const auto second = first == std::string::npos ? first : line.find(',', first + 1);
    if (second == std::string::npos) {
      throw Error(ErrorCode::kCorruptFile, path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    SplitRecord r;
    r.path = line.substr(0, first);
    try {
      r.class_id = std::stoi(line.substr(first + 1, second - first - 1));
      r.split = parse_split(line.substr(second + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kCorruptFile, path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    if (r.class_id < 0 || r.class_id >= kNumClasses) {
      throw Error(ErrorCode::kLabelOutOfRange, path.string() + ":" + std::to_string(line_no) + ": class id");
    }
    split.records.push_back(std::move(r));
  }
  return split;
}

Plane preprocess_image(const ImageBuffer& img, const PreprocessConfig& cfg) {
  cfg.validate();
  Plane p = resize_bilinear(to_plane(to_grayscale(img)), cfg.resize_side, cfg.resize_side);
  p = center_crop(p, cfg.crop_side, cfg.crop_side);
  p /= 255.0;
  return p;
}

Plane load_unit_plane(const fs::path& file, const PreprocessConfig& cfg) {
  return preprocess_image(read_image(file), cfg);
}

void augment_in_place(Plane& plane, const AugmentConfig& cfg, SplitMix64& rng) {
  const double factor = rng.uniform(cfg.contrast_low, cfg.contrast_high);
  if (factor != 1.0) plane = ((plane.array() - 0.5) * factor + 0.5).matrix();
  if (cfg.noise_sigma > 0.0) {
    for (Eigen::Index y = 0; y < plane.rows(); ++y) {
      for (Eigen::Index x = 0; x < plane.cols(); ++x) plane(y, x) += cfg.noise_sigma * rng.normal();
    }
  }
  plane = plane.cwiseMax(0.0).cwiseMin(1.0);
  if (rng.bernoulli(cfg.h_flip_prob)) plane = plane.rowwise().reverse().eval();
  if (rng.bernoulli(cfg.v_flip_prob)) plane = plane.colwise().reverse().eval();
}

void normalize_in_place(Plane& plane, const ChannelStats& stats) {
  plane = ((plane.array() - stats.mean) / stats.std).matrix();
}

Plane load_example(const fs::path& root, const SplitRecord& record, const PreprocessConfig& cfg,
                   const AugmentConfig* augment, const ChannelStats& stats, SplitMix64& rng) {
  Plane p = load_unit_plane(root / record.path, cfg);
  if (augment != nullptr) augment_in_place(p, *augment, rng);
  normalize_in_place(p, stats);
  return p;
}

ChannelStats compute_channel_stats(const std::vector<Plane>& planes) {
  if (planes.empty()) throw Error(ErrorCode::kEmptyDataset, "channel statistics need at least one plane");
  double sum = 0.0;
  double count = 0.0;
  for (const auto& p : planes) {
    sum += p.sum();
    count += static_cast<double>(p.size());
  }
  const double mean = sum / count;
  double sq = 0.0;
  for (const auto& p : planes) sq += (p.array() - mean).square().sum();
  return {mean, std::max(std::sqrt(sq / count), 1e-6)};
}

ChannelStats compute_channel_stats(const fs::path& root, const SplitManifest& split, const PreprocessConfig& cfg) {
  std::vector<Plane> planes;
  for (const std::size_t i : split.indices(Split::kTrain)) {
    planes.push_back(load_unit_plane(root / split.records[i].path, cfg));
  }
  if (planes.empty()) throw Error(ErrorCode::kEmptyDataset, "train split is empty");
  return compute_channel_stats(planes);
}

DatasetManifest generate_fixture_dataset(const fs::path& root, int per_class, std::uint64_t seed) {
  if (per_class < 3) throw Error(ErrorCode::kInvalidArgument, "fixture needs at least 3 images per class");
  constexpr int kSide = 80;
  std::error_code ec;
  DatasetManifest manifest;
  manifest.root = root;
  for (int c = 0; c < kNumClasses; ++c) {
    const fs::path dir = root / default_class_dirs()[c];
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
    for (int i = 0; i < per_class; ++i) {
      SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(c) * 1'000'003ULL + static_cast<std::uint64_t>(i)));
      const double angle = (36.0 * c + rng.uniform(-4.0, 4.0)) * std::numbers::pi / 180.0;
      const double period = rng.uniform(7.0, 10.0);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double radius = 6.0 + 3.0 * c + rng.uniform(-1.0, 1.0);
      const double cx = kSide / 2.0 + rng.uniform(-4.0, 4.0);
      const double cy = kSide / 2.0 + rng.uniform(-4.0, 4.0);
      const double ca = std::cos(angle), sa = std::sin(angle);

      ImageBuffer img(kSide, kSide, 3);
      for (int y = 0; y < kSide; ++y) {
        for (int x = 0; x < kSide; ++x) {
          double v = 0.55 + 0.3 * std::sin(2.0 * std::numbers::pi * (x * ca + y * sa) / period + phase);
          const double d = std::hypot(x - cx, y - cy);
          if (d < radius) v = 0.15;
          v += 0.03 * rng.normal();
          const double rgb[3] = {v, 0.9 * v, 0.8 * v + 0.1};
          for (int k = 0; k < 3; ++k) {
            img.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(std::round(rgb[k] * 255.0), 0.0, 255.0));
          }
        }
      }
      char name[32];
      std::snprintf(name, sizeof(name), "cell_%04d.bmp", i);
      write_file_atomic(dir / name, encode_bmp(img));
      manifest.records.push_back({(fs::path(default_class_dirs()[c]) / name).generic_string(), c});
    }
  }
  std::sort(manifest.records.begin(), manifest.records.end(),
            [](const ManifestRecord& a, const ManifestRecord& b) { return a.path < b.path; });
  return manifest;
}

}  // namespace cytoclass

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

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cytoclass/image.hpp"
#include "cytoclass/random.hpp"

namespace cytoclass {

inline constexpr int kNumClasses = 5;

using ClassNames = std::array<std::string, kNumClasses>;

/// Class names indexed by class id, in plot/report order.
const ClassNames& class_names();

/// SIPaKMeD directory names for class ids 0..4.
const ClassNames& default_class_dirs();

struct ManifestRecord {
  std::string path;  // relative to the dataset root, '/' separated
  int class_id = 0;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  ClassNames class_names = cytoclass::class_names();

  std::array<std::size_t, kNumClasses> class_counts() const;
};

enum class Split { kTrain, kVal, kTest };

std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct SplitRecord {
  std::string path;
  int class_id = 0;
  Split split = Split::kTrain;

  friend bool operator==(const SplitRecord&, const SplitRecord&) = default;
};

/// Per-class 8:1:1 assignment. Record order follows the source manifest.
struct SplitManifest {
  std::vector<SplitRecord> records;
  std::uint64_t seed = 0;

  std::vector<std::size_t> indices(Split s) const;
};

/// Sizes used to bring every image to a square working plane:
/// resize to resize_side x resize_side, then center-crop crop_side.
struct PreprocessConfig {
  int resize_side = 72;
  int crop_side = 64;

  void validate() const;
};

struct AugmentConfig {
  double h_flip_prob = 0.5;
  double v_flip_prob = 0.5;
  double noise_sigma = 0.02;
  double contrast_low = 0.8;
  double contrast_high = 1.2;

  void validate() const;
};

struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Enumerates BMP/PNG files under root/<class_dirs[c]> (recursively) and
/// sorts the records by relative path. When a class directory has files
/// inside a CROPPED subdirectory, only those are taken.
DatasetManifest scan_dataset(const std::filesystem::path& root,
                             const ClassNames& class_dirs = default_class_dirs());

/// Per class: shuffle with stream splitmix64(seed ^ class_id), first
/// floor(n/10) go to test, the next floor(n/10) to val, the rest to train.
SplitManifest stratified_split(const DatasetManifest& manifest, std::uint64_t seed);

/// CSV with header `path,class_id,split`, LF line endings.
void write_split_csv(const SplitManifest& split, const std::filesystem::path& path);
std::string split_csv_string(const SplitManifest& split);
SplitManifest read_split_csv(const std::filesystem::path& path);

/// decode -> grayscale -> resize -> center crop -> scale to [0, 1].
Plane preprocess_image(const ImageBuffer& img, const PreprocessConfig& cfg);
Plane load_unit_plane(const std::filesystem::path& file, const PreprocessConfig& cfg);

/// Contrast about 0.5, additive gaussian noise, clamp to [0, 1], then flips.
/// Draw order from `rng`: contrast factor, noise samples (row-major),
/// horizontal flip, vertical flip.
void augment_in_place(Plane& plane, const AugmentConfig& cfg, SplitMix64& rng);

void normalize_in_place(Plane& plane, const ChannelStats& stats);

/// Full per-example pipeline. `augment` may be null.
Plane load_example(const std::filesystem::path& root, const SplitRecord& record, const PreprocessConfig& cfg,
                   const AugmentConfig* augment, const ChannelStats& stats, SplitMix64& rng);

/// Population mean and standard deviation (floored at 1e-6) of every
/// preprocessed training-split sample.
ChannelStats compute_channel_stats(const std::filesystem::path& root, const SplitManifest& split,
                                   const PreprocessConfig& cfg);
ChannelStats compute_channel_stats(const std::vector<Plane>& planes);

/// Writes per_class synthetic 80x80 RGB BMP cells for each class: gratings at
/// class-specific angles plus a class-specific dark disk.
DatasetManifest generate_fixture_dataset(const std::filesystem::path& root, int per_class, std::uint64_t seed);

}  // namespace cytoclass

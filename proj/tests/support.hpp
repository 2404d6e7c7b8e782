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
#include <string>
#include <vector>

#include "cytoclass/hog.hpp"
#include "cytoclass/image.hpp"
#include "cytoclass/random.hpp"

namespace cytoclass::testing {

/// PNG writer used to build decoder fixtures. `filter` is applied to every
/// row; -1 cycles through the five filter types.
std::vector<std::uint8_t> encode_png(const ImageBuffer& img, int filter = 0);

/// Fresh empty directory under the system temp dir.
std::filesystem::path fresh_dir(const std::string& name);

Plane random_plane(int width, int height, SplitMix64& rng);

/// Gaussian blobs around class-specific centers.
FeatureMatrix blob_features(int per_class, int cols, int n_classes, double spread, SplitMix64& rng);

}  // namespace cytoclass::testing

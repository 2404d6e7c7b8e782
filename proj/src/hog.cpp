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

#include "cytoclass/hog.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cytoclass/error.hpp"
#include "cytoclass/parallel.hpp"

namespace cytoclass {

void HogConfig::validate() const {
  if (cell_size < 2 || block_size < 1 || block_stride < 1 || block_stride > block_size || n_bins < 2 ||
      !(clip > 0.0 && clip <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid HOG configuration");
  }
}

FeatureMatrix FeatureMatrix::subset(const std::vector<std::size_t>& indices) const {
  FeatureMatrix out;
  out.values.resize(static_cast<Eigen::Index>(indices.size()), values.cols());
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.values.row(static_cast<Eigen::Index>(k)) = values.row(static_cast<Eigen::Index>(indices[k]));
    out.labels.push_back(labels[indices[k]]);
  }
  return out;
}

namespace {

struct BlockGrid {
  int cells_x, cells_y, blocks_x, blocks_y;
};

BlockGrid block_grid(const HogConfig& cfg, int width, int height) {
  cfg.validate();
  if (width % cfg.cell_size != 0 || height % cfg.cell_size != 0) {
    throw Error(ErrorCode::kDimensionNotMultipleOfCell, std::to_string(width) + "x" + std::to_string(height) +
                                                            " is not a multiple of cell size " +
                                                            std::to_string(cfg.cell_size));
  }
  BlockGrid g{width / cfg.cell_size, height / cfg.cell_size, 0, 0};
  if (g.cells_x < cfg.block_size || g.cells_y < cfg.block_size) {
    throw Error(ErrorCode::kDimensionNotMultipleOfCell, "image smaller than one block");
  }
  g.blocks_x = (g.cells_x - cfg.block_size) / cfg.block_stride + 1;
  g.blocks_y = (g.cells_y - cfg.block_size) / cfg.block_stride + 1;
  return g;
}

}  // namespace

std::size_t hog_feature_len(const HogConfig& cfg, int width, int height) {
  const BlockGrid g = block_grid(cfg, width, height);
  return static_cast<std::size_t>(g.blocks_x) * g.blocks_y * cfg.block_size * cfg.block_size * cfg.n_bins;
}

Eigen::VectorXd extract_hog(const Plane& plane, const HogConfig& cfg) {
  const int width = static_cast<int>(plane.cols());
  const int height = static_cast<int>(plane.rows());
  const BlockGrid g = block_grid(cfg, width, height);
  const double range = cfg.signed_gradients ? 360.0 : 180.0;
  const double bin_width = range / cfg.n_bins;

  // Per-cell histograms, cell-major: (cy * cells_x + cx) * n_bins + bin.
  Eigen::VectorXd cells = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.cells_x) * g.cells_y * cfg.n_bins);
  for (int y = 0; y < height; ++y) {
    const int up = std::max(y - 1, 0), down = std::min(y + 1, height - 1);
    for (int x = 0; x < width; ++x) {
      const int left = std::max(x - 1, 0), right = std::min(x + 1, width - 1);
      const double gx = plane(y, right) - plane(y, left);
      const double gy = plane(down, x) - plane(up, x);
      const double magnitude = std::sqrt(gx * gx + gy * gy);
      if (magnitude == 0.0) continue;

      double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (angle < 0.0) angle += 360.0;
      if (!cfg.signed_gradients && angle >= 180.0) angle -= 180.0;
      if (angle >= range) angle -= range;

      const double pos = angle / bin_width - 0.5;
      const double lower = std::floor(pos);
      const double frac = pos - lower;
      const int b0 = (static_cast<int>(lower) + cfg.n_bins) % cfg.n_bins;
      const int b1 = (b0 + 1) % cfg.n_bins;

      const int cell = (y / cfg.cell_size) * g.cells_x + (x / cfg.cell_size);
      cells(cell * cfg.n_bins + b0) += magnitude * (1.0 - frac);
      cells(cell * cfg.n_bins + b1) += magnitude * frac;
    }
  }

  const int block_len = cfg.block_size * cfg.block_size * cfg.n_bins;
  Eigen::VectorXd out(static_cast<Eigen::Index>(g.blocks_x) * g.blocks_y * block_len);
  Eigen::VectorXd block(block_len);
  constexpr double kEps = 1e-12;
  Eigen::Index at = 0;
  for (int by = 0; by < g.blocks_y; ++by) {
    for (int bx = 0; bx < g.blocks_x; ++bx) {
      int k = 0;
      for (int cy = 0; cy < cfg.block_size; ++cy) {
        for (int cx = 0; cx < cfg.block_size; ++cx) {
          const int cell = (by * cfg.block_stride + cy) * g.cells_x + (bx * cfg.block_stride + cx);
          block.segment(k, cfg.n_bins) = cells.segment(cell * cfg.n_bins, cfg.n_bins);
          k += cfg.n_bins;
        }
      }
      // L2-Hys.
      block /= std::sqrt(block.squaredNorm() + kEps);
      block = block.cwiseMin(cfg.clip);
      block /= std::sqrt(block.squaredNorm() + kEps);
      out.segment(at, block_len) = block;
      at += block_len;
    }
  }
  return out;
}

FeatureMatrix extract_features(const std::filesystem::path& root, const SplitManifest& split,
                               const PreprocessConfig& preprocess, const HogConfig& hog) {
  const auto n = static_cast<Eigen::Index>(split.records.size());
  FeatureMatrix fm;
  fm.values.resize(n, static_cast<Eigen::Index>(hog_feature_len(hog, preprocess.crop_side, preprocess.crop_side)));
  fm.labels.resize(split.records.size());
  parallel_for(split.records.size(), [&](std::size_t i) {
    const auto& r = split.records[i];
    fm.values.row(static_cast<Eigen::Index>(i)) = extract_hog(load_unit_plane(root / r.path, preprocess), hog).transpose();
    fm.labels[i] = r.class_id;
  });
  return fm;
}

}  // namespace cytoclass

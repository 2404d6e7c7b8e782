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
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cytoclass {

/// Decoded raster image, row-major with interleaved channels.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB)
  std::vector<std::uint8_t> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c);

  std::uint8_t& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

/// Real-valued single-channel image. rows() is the height, cols() the width.
template <typename Scalar>
using PlaneT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Plane = PlaneT<double>;

/// Dispatches on the magic bytes. Supports uncompressed 8-bit paletted and
/// 24-bit BMP, and 8-bit gray/RGB non-interlaced PNG.
ImageBuffer decode_image(std::span<const std::uint8_t> bytes);
ImageBuffer decode_bmp(std::span<const std::uint8_t> bytes);
ImageBuffer decode_png(std::span<const std::uint8_t> bytes);

ImageBuffer read_image(const std::filesystem::path& path);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Bottom-up uncompressed BMP: 8-bit with a gray palette for 1 channel,
/// 24-bit for 3 channels.
std::vector<std::uint8_t> encode_bmp(const ImageBuffer& img);

/// Rec.601 luma, rounded half away from zero. Gray input is returned as is.
ImageBuffer to_grayscale(const ImageBuffer& img);

/// Gray image to a plane holding the raw 0..255 sample values.
Plane to_plane(const ImageBuffer& gray);

/// Bilinear resampling with half-pixel centers and edge clamping.
Plane resize_bilinear(const Plane& p, int out_w, int out_h);

/// Crop anchored at (floor((w - out_w) / 2), floor((h - out_h) / 2)).
Plane center_crop(const Plane& p, int out_w, int out_h);

}  // namespace cytoclass

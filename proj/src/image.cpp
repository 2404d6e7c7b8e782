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

#include "cytoclass/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "cytoclass/error.hpp"

namespace cytoclass {
namespace {

constexpr std::array<std::uint8_t, 8> kPngSignature = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};

std::uint32_t read_le32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::uint16_t read_le16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (static_cast<std::uint32_t>(b[at]) << 24) | (static_cast<std::uint32_t>(b[at + 1]) << 16) |
         (static_cast<std::uint32_t>(b[at + 2]) << 8) | static_cast<std::uint32_t>(b[at + 3]);
}

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_le16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void require(bool ok, ErrorCode code, const char* what) {
  if (!ok) throw Error(code, what);
}

std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a);
  const int pb = std::abs(p - b);
  const int pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace

ImageBuffer::ImageBuffer(int w, int h, int c)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, 0) {
  if (w < 1 || h < 1 || (c != 1 && c != 3)) {
    throw Error(ErrorCode::kInvalidArgument, "image must be at least 1x1 with 1 or 3 channels");
  }
}

ImageBuffer decode_image(std::span<const std::uint8_t> bytes) {
  require(!bytes.empty(), ErrorCode::kUnsupportedFormat, "empty input");
  if (bytes.size() >= 2 && bytes[0] == 'B' && bytes[1] == 'M') return decode_bmp(bytes);
  if (bytes.size() >= kPngSignature.size() &&
      std::equal(kPngSignature.begin(), kPngSignature.end(), bytes.begin())) {
    return decode_png(bytes);
  }
  throw Error(ErrorCode::kUnsupportedFormat, "no BMP or PNG signature");
}

ImageBuffer decode_bmp(std::span<const std::uint8_t> b) {
  require(b.size() >= 2 && b[0] == 'B' && b[1] == 'M', ErrorCode::kUnsupportedFormat, "not a BMP file");
  require(b.size() >= 54, ErrorCode::kCorruptFile, "BMP header truncated");
  const std::uint32_t pixel_offset = read_le32(b, 10);
  const std::uint32_t dib_size = read_le32(b, 14);
  require(dib_size >= 40, ErrorCode::kUnsupportedVariant, "BMP core headers are not supported");
  require(b.size() >= 14 + static_cast<std::size_t>(dib_size), ErrorCode::kCorruptFile, "BMP info header truncated");
  const auto raw_width = static_cast<std::int32_t>(read_le32(b, 18));
  const auto raw_height = static_cast<std::int32_t>(read_le32(b, 22));
  const std::uint16_t bpp = read_le16(b, 28);
  const std::uint32_t compression = read_le32(b, 30);
  const std::uint32_t colors_used = read_le32(b, 46);

  require(compression == 0, ErrorCode::kUnsupportedVariant, "compressed BMP");
  require(bpp == 8 || bpp == 24, ErrorCode::kUnsupportedVariant, "BMP bit depth must be 8 or 24");
  require(raw_width > 0 && raw_height != 0, ErrorCode::kCorruptFile, "BMP dimensions");
  const bool bottom_up = raw_height > 0;
  const int width = raw_width;
  const int height = bottom_up ? raw_height : -raw_height;

  const std::size_t stride = ((static_cast<std::size_t>(bpp) * width + 31) / 32) * 4;
  require(pixel_offset <= b.size() && b.size() - pixel_offset >= stride * height, ErrorCode::kCorruptFile,
          "BMP pixel data truncated");

  if (bpp == 24) {
    ImageBuffer img(width, height, 3);
    for (int y = 0; y < height; ++y) {
      const int src_row = bottom_up ? height - 1 - y : y;
      const std::size_t base = pixel_offset + stride * src_row;
      for (int x = 0; x < width; ++x) {
        const std::size_t p = base + 3 * static_cast<std::size_t>(x);
        img.at(x, y, 0) = b[p + 2];
        img.at(x, y, 1) = b[p + 1];
        img.at(x, y, 2) = b[p];
      }
    }
    return img;
  }

  const std::size_t palette_entries = colors_used == 0 ? 256 : colors_used;
  require(palette_entries <= 256, ErrorCode::kCorruptFile, "BMP palette too large");
  const std::size_t palette_at = 14 + dib_size;
  require(palette_at + 4 * palette_entries <= pixel_offset, ErrorCode::kCorruptFile, "BMP palette truncated");
  std::vector<std::array<std::uint8_t, 3>> palette(256, {0, 0, 0});
  bool gray = true;
  for (std::size_t i = 0; i < palette_entries; ++i) {
    const std::size_t p = palette_at + 4 * i;
    palette[i] = {b[p + 2], b[p + 1], b[p]};
    gray = gray && b[p] == b[p + 1] && b[p + 1] == b[p + 2];
  }
  ImageBuffer img(width, height, gray ? 1 : 3);
  for (int y = 0; y < height; ++y) {
    const int src_row = bottom_up ? height - 1 - y : y;
    const std::size_t base = pixel_offset + stride * src_row;
    for (int x = 0; x < width; ++x) {
      const std::uint8_t index = b[base + x];
      require(index < palette_entries, ErrorCode::kCorruptFile, "BMP palette index out of range");
      for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = palette[index][c];
    }
  }
  return img;
}

ImageBuffer decode_png(std::span<const std::uint8_t> b) {
  require(b.size() >= kPngSignature.size() && std::equal(kPngSignature.begin(), kPngSignature.end(), b.begin()),
          ErrorCode::kUnsupportedFormat, "not a PNG file");
  std::size_t pos = kPngSignature.size();
  int width = 0, height = 0, channels = 0;
  bool have_header = false, have_end = false;
  std::vector<std::uint8_t> compressed;

  while (!have_end) {
    require(b.size() - pos >= 12, ErrorCode::kCorruptFile, "PNG chunk truncated");
    const std::uint32_t length = read_be32(b, pos);
    require(length <= b.size() - pos - 12, ErrorCode::kCorruptFile, "PNG chunk truncated");
    const auto type = b.subspan(pos + 4, 4);
    const auto body = b.subspan(pos + 8, length);
    const std::uint32_t stored_crc = read_be32(b, pos + 8 + length);
    const auto actual_crc = static_cast<std::uint32_t>(crc32(0L, type.data(), 4 + length));
    require(stored_crc == actual_crc, ErrorCode::kCorruptFile, "PNG chunk CRC mismatch");
    const std::string name(type.begin(), type.end());

    if (name == "IHDR") {
      require(length == 13, ErrorCode::kCorruptFile, "PNG IHDR length");
      width = static_cast<int>(read_be32(body, 0));
      height = static_cast<int>(read_be32(body, 4));
      const std::uint8_t depth = body[8], color = body[9], interlace = body[12];
      require(width > 0 && height > 0, ErrorCode::kCorruptFile, "PNG dimensions");
      require(depth == 8, ErrorCode::kUnsupportedVariant, "PNG bit depth must be 8");
      require(color == 0 || color == 2, ErrorCode::kUnsupportedVariant, "PNG color type must be gray or RGB");
      require(body[10] == 0 && body[11] == 0, ErrorCode::kUnsupportedVariant, "PNG compression/filter method");
      require(interlace == 0, ErrorCode::kUnsupportedVariant, "interlaced PNG");
      channels = color == 0 ? 1 : 3;
      have_header = true;
    } else if (name == "IDAT") {
      require(have_header, ErrorCode::kCorruptFile, "PNG IDAT before IHDR");
      compressed.insert(compressed.end(), body.begin(), body.end());
    } else if (name == "IEND") {
      have_end = true;
    }
    pos += 12 + length;
  }
  require(have_header, ErrorCode::kCorruptFile, "PNG without IHDR");

  const std::size_t row_bytes = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw((row_bytes + 1) * height);
  uLongf raw_size = raw.size();
  const int status = uncompress(raw.data(), &raw_size, compressed.data(), compressed.size());
  require(status == Z_OK && raw_size == raw.size(), ErrorCode::kCorruptFile, "PNG image data does not inflate");

  ImageBuffer img(width, height, channels);
  const int bpp = channels;
  std::vector<std::uint8_t> prev(row_bytes, 0);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[(row_bytes + 1) * y];
    std::uint8_t* row = &raw[(row_bytes + 1) * y + 1];
    for (std::size_t i = 0; i < row_bytes; ++i) {
      const int left = i >= static_cast<std::size_t>(bpp) ? row[i - bpp] : 0;
      const int up = prev[i];
      const int up_left = i >= static_cast<std::size_t>(bpp) ? prev[i - bpp] : 0;
      int predictor = 0;
      switch (filter) {
        case 0: predictor = 0; break;
        case 1: predictor = left; break;
        case 2: predictor = up; break;
        case 3: predictor = (left + up) / 2; break;
        case 4: predictor = paeth(left, up, up_left); break;
        default: throw Error(ErrorCode::kCorruptFile, "PNG filter type");
      }
      row[i] = static_cast<std::uint8_t>(row[i] + predictor);
    }
    std::copy(row, row + row_bytes, img.data.begin() + static_cast<std::ptrdiff_t>(row_bytes * y));
    std::copy(row, row + row_bytes, prev.begin());
  }
  return img;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ImageBuffer read_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_image(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_bmp(const ImageBuffer& img) {
  const int bpp = img.channels == 3 ? 24 : 8;
  const std::uint32_t palette_bytes = img.channels == 1 ? 256 * 4 : 0;
  const std::size_t stride = ((static_cast<std::size_t>(bpp) * img.width + 31) / 32) * 4;
  const std::uint32_t offset = 14 + 40 + palette_bytes;
  const auto image_bytes = static_cast<std::uint32_t>(stride * img.height);

  std::vector<std::uint8_t> out;
  out.reserve(offset + image_bytes);
  out.push_back('B');
  out.push_back('M');
  put_le32(out, offset + image_bytes);
  put_le32(out, 0);
  put_le32(out, offset);
  put_le32(out, 40);
  put_le32(out, static_cast<std::uint32_t>(img.width));
  put_le32(out, static_cast<std::uint32_t>(img.height));
  put_le16(out, 1);
  put_le16(out, static_cast<std::uint16_t>(bpp));
  put_le32(out, 0);
  put_le32(out, image_bytes);
  put_le32(out, 2835);
  put_le32(out, 2835);
  put_le32(out, img.channels == 1 ? 256 : 0);
  put_le32(out, 0);
  if (img.channels == 1) {
    for (int i = 0; i < 256; ++i) {
      const auto v = static_cast<std::uint8_t>(i);
      out.insert(out.end(), {v, v, v, 0});
    }
  }
  for (int y = img.height - 1; y >= 0; --y) {
    const std::size_t row_start = out.size();
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 3) {
        out.insert(out.end(), {img.at(x, y, 2), img.at(x, y, 1), img.at(x, y, 0)});
      } else {
        out.push_back(img.at(x, y));
      }
    }
    out.resize(row_start + stride, 0);
  }
  return out;
}

ImageBuffer to_grayscale(const ImageBuffer& img) {
  if (img.channels == 1) return img;
  ImageBuffer gray(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double luma = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      gray.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::round(luma), 0.0, 255.0));
    }
  }
  return gray;
}

Plane to_plane(const ImageBuffer& gray) {
  if (gray.channels != 1) throw Error(ErrorCode::kInvalidArgument, "to_plane expects a gray image");
  Plane p(gray.height, gray.width);
  for (int y = 0; y < gray.height; ++y) {
    for (int x = 0; x < gray.width; ++x) p(y, x) = gray.at(x, y);
  }
  return p;
}

Plane resize_bilinear(const Plane& p, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw Error(ErrorCode::kInvalidArgument, "resize target must be at least 1x1");
  const auto in_w = static_cast<int>(p.cols());
  const auto in_h = static_cast<int>(p.rows());
  const double scale_x = static_cast<double>(in_w) / out_w;
  const double scale_y = static_cast<double>(in_h) / out_h;

  auto sample_axis = [](int dst, double scale, int size, int& i0, int& i1, double& frac) {
    const double src = std::clamp((dst + 0.5) * scale - 0.5, 0.0, static_cast<double>(size - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, size - 1);
    frac = src - i0;
  };

  Plane out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    int y0, y1;
    double fy;
    sample_axis(y, scale_y, in_h, y0, y1, fy);
    for (int x = 0; x < out_w; ++x) {
      int x0, x1;
      double fx;
      sample_axis(x, scale_x, in_w, x0, x1, fx);
      const double top = p(y0, x0) + fx * (p(y0, x1) - p(y0, x0));
      const double bottom = p(y1, x0) + fx * (p(y1, x1) - p(y1, x0));
      out(y, x) = top + fy * (bottom - top);
    }
  }
  return out;
}

Plane center_crop(const Plane& p, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1 || out_w > p.cols() || out_h > p.rows()) {
    throw Error(ErrorCode::kCropLargerThanImage,
                "crop " + std::to_string(out_w) + "x" + std::to_string(out_h) + " from " +
                    std::to_string(p.cols()) + "x" + std::to_string(p.rows()));
  }
  const auto x0 = (p.cols() - out_w) / 2;
  const auto y0 = (p.rows() - out_h) / 2;
  return p.block(y0, x0, out_h, out_w);
}

}  // namespace cytoclass

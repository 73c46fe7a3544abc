// Copyright 2026 the xmodal authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef XMODAL_IDX_HPP
#define XMODAL_IDX_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::data {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kImageSide = 28;

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t off) {
  if (off + 4 > bytes.size())
    throw Truncated("idx: header ends at byte " + std::to_string(bytes.size()));
  return (std::uint32_t(bytes[off]) << 24) | (std::uint32_t(bytes[off + 1]) << 16) |
         (std::uint32_t(bytes[off + 2]) << 8) | std::uint32_t(bytes[off + 3]);
}

}  // namespace detail

/// Parse an IDX image container (big-endian magic 0x00000803, then count,
/// rows, cols). Pixels map byte -> byte/255.0. Rows/cols must both be 28.
inline std::vector<Tensor> parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxImageMagic)
    throw BadMagic("idx images: magic " + std::to_string(magic));
  const std::uint32_t count = detail::read_be32(bytes, 4);
  const std::uint32_t rows = detail::read_be32(bytes, 8);
  const std::uint32_t cols = detail::read_be32(bytes, 12);
  if (rows != kImageSide || cols != kImageSide)
    throw BadDims("idx images: expected 28x28, got " + std::to_string(rows) + "x" +
                  std::to_string(cols));
  const std::size_t need = 16 + std::size_t(count) * rows * cols;
  if (bytes.size() < need)
    throw Truncated("idx images: header promises " + std::to_string(need) +
                    " bytes, stream has " + std::to_string(bytes.size()));
  if (bytes.size() > need)
    throw TrailingData("idx images: " + std::to_string(bytes.size() - need) +
                       " bytes past payload");
  std::vector<Tensor> images;
  images.reserve(count);
  std::size_t off = 16;
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor img({kImageSide, kImageSide});
    for (std::size_t p = 0; p < kImageSide * kImageSide; ++p)
      img[p] = bytes[off + p] / 255.0;
    off += kImageSide * kImageSide;
    images.push_back(std::move(img));
  }
  return images;
}

/// Parse an IDX label container (magic 0x00000801). Labels must be 0..9.
inline std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxLabelMagic)
    throw BadMagic("idx labels: magic " + std::to_string(magic));
  const std::uint32_t count = detail::read_be32(bytes, 4);
  const std::size_t need = 8 + std::size_t(count);
  if (bytes.size() < need)
    throw Truncated("idx labels: header promises " + std::to_string(need) +
                    " bytes, stream has " + std::to_string(bytes.size()));
  if (bytes.size() > need)
    throw TrailingData("idx labels: " + std::to_string(bytes.size() - need) +
                       " bytes past payload");
  std::vector<int> labels;
  labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t b = bytes[8 + i];
    if (b > 9)
      throw BadLabel("idx labels: byte " + std::to_string(int(b)) + " at index " +
                     std::to_string(i));
    labels.push_back(int(b));
  }
  return labels;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

// IDX writers, used by the corpus generator and round-trip tests.

inline void write_idx_images(const std::filesystem::path& path,
                             const std::vector<Tensor>& images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  auto be32 = [&](std::uint32_t v) {
    const std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16),
                               std::uint8_t(v >> 8), std::uint8_t(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(kIdxImageMagic);
  be32(std::uint32_t(images.size()));
  be32(kImageSide);
  be32(kImageSide);
  for (const Tensor& img : images) {
    for (double v : img.data) {
      const double clipped = std::min(1.0, std::max(0.0, v));
      const std::uint8_t b = std::uint8_t(std::lround(clipped * 255.0));
      out.put(char(b));
    }
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline void write_idx_labels(const std::filesystem::path& path,
                             const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  auto be32 = [&](std::uint32_t v) {
    const std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16),
                               std::uint8_t(v >> 8), std::uint8_t(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(kIdxLabelMagic);
  be32(std::uint32_t(labels.size()));
  for (int l : labels) out.put(char(std::uint8_t(l)));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace xmodal::data

#endif  // XMODAL_IDX_HPP

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

#ifndef XMODAL_WAV_HPP
#define XMODAL_WAV_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal::data {

struct WavData {
  std::vector<double> samples;  // in [-1, 1], sample s maps to s/32768.0
  std::uint32_t sample_rate = 0;
};

namespace detail {

inline std::uint32_t read_le32(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 4 > b.size()) throw Truncated("wav: unexpected end of stream");
  return std::uint32_t(b[off]) | (std::uint32_t(b[off + 1]) << 8) |
         (std::uint32_t(b[off + 2]) << 16) | (std::uint32_t(b[off + 3]) << 24);
}

inline std::uint16_t read_le16(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 2 > b.size()) throw Truncated("wav: unexpected end of stream");
  return std::uint16_t(b[off]) | (std::uint16_t(b[off + 1]) << 8);
}

inline bool tag_is(std::span<const std::uint8_t> b, std::size_t off, const char* tag) {
  if (off + 4 > b.size()) return false;
  return b[off] == std::uint8_t(tag[0]) && b[off + 1] == std::uint8_t(tag[1]) &&
         b[off + 2] == std::uint8_t(tag[2]) && b[off + 3] == std::uint8_t(tag[3]);
}

}  // namespace detail

/// Parse a RIFF/WAVE stream. Only PCM (format tag 1), 16-bit, mono is
/// supported; unknown chunks are skipped. Samples are scaled by 1/32768.
inline WavData parse_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !detail::tag_is(bytes, 0, "RIFF"))
    throw NotRiff("wav: missing RIFF tag");
  if (!detail::tag_is(bytes, 8, "WAVE"))
    throw NotRiff("wav: missing WAVE form type");
  const std::uint32_t riff_size = detail::read_le32(bytes, 4);
  if (std::size_t(riff_size) + 8 > bytes.size())
    throw Truncated("wav: RIFF size exceeds stream");

  WavData wav;
  bool have_fmt = false, have_data = false;
  std::size_t off = 12;
  while (off + 8 <= bytes.size()) {
    const std::uint32_t chunk_size = detail::read_le32(bytes, off + 4);
    const std::size_t body = off + 8;
    if (body + chunk_size > bytes.size())
      throw Truncated("wav: chunk at offset " + std::to_string(off) +
                      " overruns stream");
    if (detail::tag_is(bytes, off, "fmt ")) {
      if (chunk_size < 16) throw Truncated("wav: fmt chunk too small");
      const std::uint16_t format = detail::read_le16(bytes, body + 0);
      const std::uint16_t channels = detail::read_le16(bytes, body + 2);
      const std::uint32_t rate = detail::read_le32(bytes, body + 4);
      const std::uint16_t bits = detail::read_le16(bytes, body + 14);
      if (format != 1)
        throw UnsupportedFormat("wav: format tag " + std::to_string(format) +
                                ", only PCM supported");
      if (channels != 1)
        throw UnsupportedFormat("wav: " + std::to_string(channels) +
                                " channels, only mono supported");
      if (bits != 16)
        throw UnsupportedFormat("wav: " + std::to_string(bits) +
                                "-bit samples, only 16-bit supported");
      if (rate == 0) throw UnsupportedFormat("wav: zero sample rate");
      wav.sample_rate = rate;
      have_fmt = true;
    } else if (detail::tag_is(bytes, off, "data")) {
      if (!have_fmt) throw UnsupportedFormat("wav: data chunk before fmt");
      if (chunk_size % 2 != 0)
        throw Truncated("wav: odd data chunk size for 16-bit samples");
      const std::size_t count = chunk_size / 2;
      wav.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint16_t u = detail::read_le16(bytes, body + 2 * i);
        const std::int16_t s = static_cast<std::int16_t>(u);
        wav.samples[i] = s / 32768.0;
      }
      have_data = true;
    }
    // chunks are word-aligned
    off = body + chunk_size + (chunk_size % 2);
  }
  if (!have_fmt) throw UnsupportedFormat("wav: no fmt chunk");
  if (!have_data) throw Truncated("wav: no data chunk");
  return wav;
}

/// Write mono 16-bit PCM. Doubles are clipped to [-1, 1] and quantized by
/// round(s * 32768) clamped to int16 range.
inline void write_wav_pcm16(const std::filesystem::path& path,
                            std::span<const double> samples, std::uint32_t rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  auto le32 = [&](std::uint32_t v) {
    const char b[4] = {char(v), char(v >> 8), char(v >> 16), char(v >> 24)};
    out.write(b, 4);
  };
  auto le16 = [&](std::uint16_t v) {
    const char b[2] = {char(v), char(v >> 8)};
    out.write(b, 2);
  };
  const std::uint32_t data_bytes = std::uint32_t(samples.size() * 2);
  out.write("RIFF", 4);
  le32(36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  le32(16);
  le16(1);               // PCM
  le16(1);               // mono
  le32(rate);
  le32(rate * 2);        // byte rate
  le16(2);               // block align
  le16(16);              // bits per sample
  out.write("data", 4);
  le32(data_bytes);
  for (double s : samples) {
    double v = std::min(1.0, std::max(-1.0, s));
    long q = std::lround(v * 32768.0);
    q = std::min(32767L, std::max(-32768L, q));
    le16(std::uint16_t(std::int16_t(q)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace xmodal::data

#endif  // XMODAL_WAV_HPP

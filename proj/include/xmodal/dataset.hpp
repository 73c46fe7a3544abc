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

#ifndef XMODAL_DATASET_HPP
#define XMODAL_DATASET_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::data {

inline constexpr int kNumClasses = 10;

struct ImageExample {
  Tensor pixels;  // 28x28, values in [0,1]
  int label = 0;
  std::uint64_t id = 0;
};

struct AudioExample {
  std::vector<double> samples;  // in [-1,1]
  std::uint32_t sample_rate = 0;
  int label = 0;
  std::uint64_t id = 0;
};

/// "oh" and "zero" are one class; spoken names and bare digits map to 0..9.
inline int canonical_digit_label(std::string_view token) {
  static const std::map<std::string_view, int> table = {
      {"zero", 0}, {"oh", 0}, {"0", 0}, {"one", 1},   {"1", 1}, {"two", 2},
      {"2", 2},    {"three", 3}, {"3", 3}, {"four", 4}, {"4", 4}, {"five", 5},
      {"5", 5},    {"six", 6},   {"6", 6}, {"seven", 7}, {"7", 7}, {"eight", 8},
      {"8", 8},    {"nine", 9},  {"9", 9}};
  auto it = table.find(token);
  if (it == table.end())
    throw UnknownToken("unknown digit token '" + std::string(token) + "'");
  return it->second;
}

/// Immutable pool of examples with a per-class index. Shareable read-only
/// once built.
template <class T>
class ClassPool {
 public:
  ClassPool() = default;
  explicit ClassPool(std::vector<T> items) : items_(std::move(items)) {
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const int label = items_[i].label;
      if (label < 0 || label >= kNumClasses)
        throw BadLabel("pool item with label " + std::to_string(label));
      by_class_[label].push_back(i);
    }
  }

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const T& operator[](std::size_t i) const { return items_[i]; }
  const std::vector<T>& items() const { return items_; }

  std::size_t class_count(int label) const { return by_class_[label].size(); }

  /// Uniform draw from one class.
  const T& draw_from_class(int label, RngStream& rng) const {
    const auto& idx = by_class_[label];
    if (idx.empty())
      throw EmptyClass("no examples of class " + std::to_string(label));
    return items_[idx[rng.next_below(idx.size())]];
  }

  const std::vector<std::size_t>& class_indices(int label) const {
    return by_class_[label];
  }

 private:
  std::vector<T> items_;
  std::array<std::vector<std::size_t>, kNumClasses> by_class_;
};

/// B matched image/audio examples sharing digit labels.
struct PairBatch {
  std::vector<ImageExample> images;
  std::vector<AudioExample> audio;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Draw B digit-matched pairs: image uniform over the image pool, audio
/// uniform over the same digit's audio. Pairs within a batch are distinct
/// as (image id, audio id) tuples.
inline PairBatch sample_pair_batch(const ClassPool<ImageExample>& images,
                                   const ClassPool<AudioExample>& audio,
                                   std::size_t batch_pairs, RngStream& rng) {
  if (batch_pairs < 1) throw BatchTooSmall("batch of zero pairs");
  if (images.empty()) throw EmptyClass("image pool is empty");
  PairBatch batch;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> seen;
  const std::size_t max_tries = 100 * batch_pairs + 1000;
  std::size_t tries = 0;
  while (batch.size() < batch_pairs) {
    if (++tries > max_tries)
      throw PairingFailed("could not draw " + std::to_string(batch_pairs) +
                          " distinct pairs; pools too small");
    const ImageExample& img = images[rng.next_below(images.size())];
    const AudioExample& aud = audio.draw_from_class(img.label, rng);
    const std::pair<std::uint64_t, std::uint64_t> key{img.id, aud.id};
    bool dup = false;
    for (const auto& k : seen)
      if (k == key) { dup = true; break; }
    if (dup) continue;
    seen.push_back(key);
    batch.images.push_back(img);
    batch.audio.push_back(aud);
    batch.labels.push_back(img.label);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Audio manifest: UTF-8 CSV with header `path,transcript,split`.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;
  std::string transcript;
  std::string split;  // train | test | validation
  int label = 0;      // canonical_digit_label(transcript)
};

inline std::vector<ManifestEntry> parse_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("manifest: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,transcript,split")
    throw ParseError("manifest: expected header 'path,transcript,split', got '" +
                     line + "'");
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                                   : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
      throw ParseError("manifest line " + std::to_string(line_no) +
                       ": expected 3 comma-separated fields");
    ManifestEntry e;
    e.path = line.substr(0, c1);
    e.transcript = line.substr(c1 + 1, c2 - c1 - 1);
    e.split = line.substr(c2 + 1);
    if (e.path.empty())
      throw ParseError("manifest line " + std::to_string(line_no) + ": empty path");
    if (e.split != "train" && e.split != "test" && e.split != "validation")
      throw ParseError("manifest line " + std::to_string(line_no) +
                       ": unknown split '" + e.split + "'");
    e.label = canonical_digit_label(e.transcript);
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

// ---------------------------------------------------------------------------
// Feature archive: binary little-endian float64 records of fixed shape,
// record = (id: u64, label: u8, rows*cols row-major float64 matrix).
// Audio features are 100x80; image features 28x28.
// ---------------------------------------------------------------------------

struct FeatureRecord {
  std::uint64_t id = 0;
  int label = 0;
  Tensor features;  // rows x cols
};

/// In-memory feature pool with a per-class index (labels 0..9).
class FeaturePool {
 public:
  FeaturePool() = default;
  FeaturePool(std::size_t rows, std::size_t cols, std::vector<FeatureRecord> recs)
      : rows_(rows), cols_(cols), records_(std::move(recs)) {
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (r.label < 0 || r.label >= kNumClasses)
        throw BadLabel("feature record label " + std::to_string(r.label));
      if (r.features.rank() != 2 || r.features.dim(0) != rows_ ||
          r.features.dim(1) != cols_)
        throw ShapeMismatch("feature record shape " +
                            Tensor::shape_str(r.features.shape));
      by_class_[r.label].push_back(i);
    }
  }

  std::size_t size() const { return records_.size(); }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  const FeatureRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<std::size_t>& class_indices(int label) const {
    return by_class_[label];
  }

  std::size_t draw_from_class(int label, RngStream& rng) const {
    const auto& idx = by_class_[label];
    if (idx.empty())
      throw EmptyClass("no feature records of class " + std::to_string(label));
    return idx[rng.next_below(idx.size())];
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<FeatureRecord> records_;
  std::array<std::vector<std::size_t>, kNumClasses> by_class_;
};

namespace detail {

static_assert(sizeof(double) == 8);

inline void write_le_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char(v >> (8 * i));
  out.write(b, 8);
}

inline std::uint64_t read_le_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline void write_le_f64(std::ostream& out, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  write_le_u64(out, v);
}

inline double read_le_f64(std::istream& in) {
  const std::uint64_t v = read_le_u64(in);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

}  // namespace detail

inline void write_feature_archive(const std::filesystem::path& path,
                                  std::size_t rows, std::size_t cols,
                                  std::span<const FeatureRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) {
    if (r.features.size() != rows * cols)
      throw ShapeMismatch("archive record size mismatch");
    detail::write_le_u64(out, r.id);
    out.put(char(std::uint8_t(r.label)));
    for (double v : r.features.data) detail::write_le_f64(out, v);
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline FeaturePool read_feature_archive(const std::filesystem::path& path,
                                        std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const std::uint64_t total = std::uint64_t(in.tellg());
  in.seekg(0);
  const std::uint64_t rec_bytes = 8 + 1 + 8 * std::uint64_t(rows) * cols;
  if (total % rec_bytes != 0)
    throw Truncated("feature archive " + path.string() + ": size " +
                    std::to_string(total) + " is not a multiple of record size " +
                    std::to_string(rec_bytes));
  const std::size_t count = total / rec_bytes;
  std::vector<FeatureRecord> records;
  records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    FeatureRecord r;
    r.id = detail::read_le_u64(in);
    const int lbl = in.get();
    if (lbl < 0 || lbl > 9)
      throw BadLabel("feature archive: label byte " + std::to_string(lbl));
    r.label = lbl;
    r.features = Tensor({rows, cols});
    for (double& v : r.features.data) v = detail::read_le_f64(in);
    if (!in) throw Truncated("feature archive " + path.string() + ": short read");
    records.push_back(std::move(r));
  }
  return FeaturePool(rows, cols, std::move(records));
}

}  // namespace xmodal::data

#endif  // XMODAL_DATASET_HPP

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

#ifndef XMODAL_MODEL_HPP
#define XMODAL_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::nn {

inline constexpr std::size_t kEmbedDim = 128;
inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

/// Diagonal-Gaussian posterior over embeddings: N(mu, diag(exp(logvar))).
struct Posterior {
  std::vector<double> mu;      // length kEmbedDim
  std::vector<double> logvar;  // length kEmbedDim, clamped to [-10, 10]
};

/// mu / logvar batch heads as graph nodes, each N x kEmbedDim.
struct EncoderOutput {
  ad::Var mu = nullptr;
  ad::Var logvar = nullptr;
};

namespace detail {

inline void init_uniform(ad::Parameter& p, double limit, RngStream rng) {
  for (double& v : p.value.data) v = rng.next_range(-limit, limit);
}

inline double fan_in_limit(std::size_t fan_in) {
  return std::sqrt(6.0 / double(fan_in));
}

}  // namespace detail

/// Convolutional image encoder:
///   3x3 conv 64 same -> 3x3 conv 128 stride 2 same -> 3x3 conv 256
///   stride 2 same -> dense 512 -> linear 256 split into mu / logvar.
/// ReLU after every layer except the linear head.
class ImageEncoder {
 public:
  ad::Parameter conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  ad::Parameter fc_w, fc_b, head_w, head_b;

  explicit ImageEncoder(std::uint64_t seed) {
    conv1_w = ad::Parameter("image.conv1.w", Tensor({3, 3, 1, 64}));
    conv1_b = ad::Parameter("image.conv1.b", Tensor({64}), false);
    conv2_w = ad::Parameter("image.conv2.w", Tensor({3, 3, 64, 128}));
    conv2_b = ad::Parameter("image.conv2.b", Tensor({128}), false);
    conv3_w = ad::Parameter("image.conv3.w", Tensor({3, 3, 128, 256}));
    conv3_b = ad::Parameter("image.conv3.b", Tensor({256}), false);
    fc_w = ad::Parameter("image.fc.w", Tensor({7 * 7 * 256, 512}));
    fc_b = ad::Parameter("image.fc.b", Tensor({512}), false);
    head_w = ad::Parameter("image.head.w", Tensor({512, 2 * kEmbedDim}));
    head_b = ad::Parameter("image.head.b", Tensor({2 * kEmbedDim}), false);
    init(seed);
  }

  /// batch: N x 28 x 28 x 1, pixels in [0, 1].
  EncoderOutput forward(ad::Tape& tape, const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != 28 || batch.dim(2) != 28 ||
        batch.dim(3) != 1)
      throw ShapeMismatch("image encoder expects Nx28x28x1, got " +
                          Tensor::shape_str(batch.shape));
    const std::size_t n = batch.dim(0);
    using namespace ad;
    Var x = tape.constant(batch);
    Var h1 = relu(channel_bias(conv2d(x, tape.param(conv1_w), 1, 1, Padding::same),
                               tape.param(conv1_b)));
    Var h2 = relu(channel_bias(conv2d(h1, tape.param(conv2_w), 2, 2, Padding::same),
                               tape.param(conv2_b)));
    Var h3 = relu(channel_bias(conv2d(h2, tape.param(conv3_w), 2, 2, Padding::same),
                               tape.param(conv3_b)));
    Var flat = reshape(h3, {n, 7 * 7 * 256});
    Var f = relu(dense(flat, tape.param(fc_w), tape.param(fc_b)));
    Var head = dense(f, tape.param(head_w), tape.param(head_b));
    EncoderOutput out;
    out.mu = slice_cols(head, 0, kEmbedDim);
    out.logvar = clamp(slice_cols(head, kEmbedDim, 2 * kEmbedDim), kLogvarMin,
                       kLogvarMax);
    return out;
  }

  std::vector<ad::Parameter*> params() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &conv3_w,
            &conv3_b, &fc_w,    &fc_b,    &head_w,  &head_b};
  }

 private:
  void init(std::uint64_t seed) {
    using detail::fan_in_limit;
    using detail::init_uniform;
    init_uniform(conv1_w, fan_in_limit(3 * 3 * 1), RngStream::keyed(seed, conv1_w.name));
    init_uniform(conv2_w, fan_in_limit(3 * 3 * 64), RngStream::keyed(seed, conv2_w.name));
    init_uniform(conv3_w, fan_in_limit(3 * 3 * 128), RngStream::keyed(seed, conv3_w.name));
    init_uniform(fc_w, fan_in_limit(7 * 7 * 256), RngStream::keyed(seed, fc_w.name));
    // small head so initial posteriors start near the unit-Gaussian prior
    init_uniform(head_w, 0.01 * fan_in_limit(512), RngStream::keyed(seed, head_w.name));
  }
};

/// Convolutional audio encoder over 100x80 log mel inputs. The stack
/// mirrors the image encoder's depth while downsampling 100x80 to 25x10:
///   3x4 conv 64 stride (1,2) -> 3x4 conv 128 stride (2,2) -> 3x4 conv 256
///   stride (2,2) -> dense 512 -> linear 256 split into mu / logvar.
class AudioEncoder {
 public:
  ad::Parameter conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b;
  ad::Parameter fc_w, fc_b, head_w, head_b;

  explicit AudioEncoder(std::uint64_t seed) {
    conv1_w = ad::Parameter("audio.conv1.w", Tensor({3, 4, 1, 64}));
    conv1_b = ad::Parameter("audio.conv1.b", Tensor({64}), false);
    conv2_w = ad::Parameter("audio.conv2.w", Tensor({3, 4, 64, 128}));
    conv2_b = ad::Parameter("audio.conv2.b", Tensor({128}), false);
    conv3_w = ad::Parameter("audio.conv3.w", Tensor({3, 4, 128, 256}));
    conv3_b = ad::Parameter("audio.conv3.b", Tensor({256}), false);
    fc_w = ad::Parameter("audio.fc.w", Tensor({25 * 10 * 256, 512}));
    fc_b = ad::Parameter("audio.fc.b", Tensor({512}), false);
    head_w = ad::Parameter("audio.head.w", Tensor({512, 2 * kEmbedDim}));
    head_b = ad::Parameter("audio.head.b", Tensor({2 * kEmbedDim}), false);
    init(seed);
  }

  /// batch: N x 100 x 80 x 1 normalized filterbanks.
  EncoderOutput forward(ad::Tape& tape, const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != 100 || batch.dim(2) != 80 ||
        batch.dim(3) != 1)
      throw ShapeMismatch("audio encoder expects Nx100x80x1, got " +
                          Tensor::shape_str(batch.shape));
    const std::size_t n = batch.dim(0);
    using namespace ad;
    Var x = tape.constant(batch);
    Var h1 = relu(channel_bias(conv2d(x, tape.param(conv1_w), 1, 2, Padding::same),
                               tape.param(conv1_b)));
    Var h2 = relu(channel_bias(conv2d(h1, tape.param(conv2_w), 2, 2, Padding::same),
                               tape.param(conv2_b)));
    Var h3 = relu(channel_bias(conv2d(h2, tape.param(conv3_w), 2, 2, Padding::same),
                               tape.param(conv3_b)));
    Var flat = reshape(h3, {n, 25 * 10 * 256});
    Var f = relu(dense(flat, tape.param(fc_w), tape.param(fc_b)));
    Var head = dense(f, tape.param(head_w), tape.param(head_b));
    EncoderOutput out;
    out.mu = slice_cols(head, 0, kEmbedDim);
    out.logvar = clamp(slice_cols(head, kEmbedDim, 2 * kEmbedDim), kLogvarMin,
                       kLogvarMax);
    return out;
  }

  std::vector<ad::Parameter*> params() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &conv3_w,
            &conv3_b, &fc_w,    &fc_b,    &head_w,  &head_b};
  }

 private:
  void init(std::uint64_t seed) {
    using detail::fan_in_limit;
    using detail::init_uniform;
    init_uniform(conv1_w, fan_in_limit(3 * 4 * 1), RngStream::keyed(seed, conv1_w.name));
    init_uniform(conv2_w, fan_in_limit(3 * 4 * 64), RngStream::keyed(seed, conv2_w.name));
    init_uniform(conv3_w, fan_in_limit(3 * 4 * 128), RngStream::keyed(seed, conv3_w.name));
    init_uniform(fc_w, fan_in_limit(25 * 10 * 256), RngStream::keyed(seed, fc_w.name));
    init_uniform(head_w, 0.01 * fan_in_limit(512), RngStream::keyed(seed, head_w.name));
  }
};

/// Both encoders plus parameter bookkeeping.
struct Model {
  ImageEncoder image;
  AudioEncoder audio;

  explicit Model(std::uint64_t seed) : image(seed), audio(seed) {}

  std::vector<ad::Parameter*> params() {
    std::vector<ad::Parameter*> all = image.params();
    for (ad::Parameter* p : audio.params()) all.push_back(p);
    return all;
  }

  void zero_grads() {
    for (ad::Parameter* p : params())
      std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
  }
};

/// Extract plain posteriors from encoder output values.
inline std::vector<Posterior> posteriors_from(const EncoderOutput& out) {
  const Tensor& mu = out.mu->value;
  const Tensor& lv = out.logvar->value;
  const std::size_t n = mu.dim(0);
  std::vector<Posterior> ps(n);
  for (std::size_t i = 0; i < n; ++i) {
    ps[i].mu.assign(mu.data.begin() + i * kEmbedDim,
                    mu.data.begin() + (i + 1) * kEmbedDim);
    ps[i].logvar.assign(lv.data.begin() + i * kEmbedDim,
                        lv.data.begin() + (i + 1) * kEmbedDim);
  }
  return ps;
}

/// In-graph sampling: repeat each posterior row S times and draw one eps
/// per sample. Row i*S + s holds sample s of input i, so sample s of image
/// i is positive-paired with sample s of audio i at the same row index.
inline ad::Var sample_embeddings_graph(ad::Tape& tape, const EncoderOutput& out,
                                       std::size_t samples_per_input,
                                       RngStream& rng) {
  const std::size_t n = out.mu->value.dim(0);
  ad::Var mu_rep = ad::repeat_rows(out.mu, samples_per_input);
  ad::Var lv_rep = ad::repeat_rows(out.logvar, samples_per_input);
  Tensor eps({n * samples_per_input, kEmbedDim});
  for (double& v : eps.data) v = rng.next_normal();
  (void)tape;
  return ad::reparam_sample(mu_rep, lv_rep, eps);
}

/// Plain sampling for evaluation: N x S x kEmbedDim.
inline Tensor sample_embeddings(const std::vector<Posterior>& posteriors,
                                std::size_t samples_per_input, RngStream& rng) {
  const std::size_t n = posteriors.size();
  Tensor out({n, samples_per_input, kEmbedDim});
  std::size_t w = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < samples_per_input; ++s) {
      for (std::size_t k = 0; k < kEmbedDim; ++k) {
        const double sigma = std::exp(0.5 * posteriors[i].logvar[k]);
        out[w++] = posteriors[i].mu[k] + sigma * rng.next_normal();
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: 8-byte magic, little-endian u64 JSON header length, JSON
// header bytes, then one record per tensor:
//   u32 name length, UTF-8 name, u32 rank, u64 dims[rank], f64 payload.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'X', 'M', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {

inline void write_le(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(char(v >> (8 * i)));
}

inline std::uint64_t read_le(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c < 0) throw Truncated("checkpoint: unexpected end of file");
    v |= std::uint64_t(std::uint8_t(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

struct NamedTensors {
  std::string header_json;
  std::map<std::string, Tensor> tensors;
};

inline void save_named_tensors(const std::filesystem::path& path,
                               const std::string& header_json,
                               const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 8);
  detail::write_le(out, header_json.size(), 8);
  out.write(header_json.data(), std::streamsize(header_json.size()));
  for (const auto& [name, t] : tensors) {
    detail::write_le(out, name.size(), 4);
    out.write(name.data(), std::streamsize(name.size()));
    detail::write_le(out, t->rank(), 4);
    for (std::size_t d : t->shape) detail::write_le(out, d, 8);
    for (double v : t->data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::write_le(out, bits, 8);
    }
  }
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

inline NamedTensors load_named_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw CheckpointMismatch("not a checkpoint file: " + path.string());
  NamedTensors result;
  const std::uint64_t hlen = detail::read_le(in, 8);
  result.header_json.resize(hlen);
  in.read(result.header_json.data(), std::streamsize(hlen));
  if (!in) throw Truncated("checkpoint header cut short in " + path.string());
  while (true) {
    const int peek = in.peek();
    if (peek == EOF) break;
    const std::uint64_t name_len = detail::read_le(in, 4);
    std::string name(name_len, '\0');
    in.read(name.data(), std::streamsize(name_len));
    const std::uint64_t rank = detail::read_le(in, 4);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = detail::read_le(in, 8);
    Tensor t(shape);
    for (double& v : t.data) {
      const std::uint64_t bits = detail::read_le(in, 8);
      std::memcpy(&v, &bits, 8);
    }
    if (!in) throw Truncated("checkpoint record cut short in " + path.string());
    result.tensors.emplace(std::move(name), std::move(t));
  }
  return result;
}

inline void save_model_checkpoint(const std::filesystem::path& path,
                                  const std::string& header_json, Model& model,
                                  const std::vector<std::pair<std::string, const Tensor*>>& extra = {}) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (ad::Parameter* p : model.params()) tensors.emplace_back(p->name, &p->value);
  for (const auto& e : extra) tensors.push_back(e);
  save_named_tensors(path, header_json, tensors);
}

/// Restore model parameters from a checkpoint; names and shapes must match.
inline NamedTensors load_model_checkpoint(const std::filesystem::path& path,
                                          Model& model) {
  NamedTensors ckpt = load_named_tensors(path);
  for (ad::Parameter* p : model.params()) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end())
      throw CheckpointMismatch("checkpoint missing tensor '" + p->name + "'");
    if (it->second.shape != p->value.shape)
      throw CheckpointMismatch("checkpoint tensor '" + p->name + "' has shape " +
                               Tensor::shape_str(it->second.shape) + ", expected " +
                               Tensor::shape_str(p->value.shape));
    p->value = it->second;
  }
  return ckpt;
}

}  // namespace xmodal::nn

#endif  // XMODAL_MODEL_HPP

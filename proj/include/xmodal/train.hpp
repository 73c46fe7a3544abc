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

#ifndef XMODAL_TRAIN_HPP
#define XMODAL_TRAIN_HPP

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/dataset.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/loss.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"

namespace xmodal::train {

/// Every knob of a training run, serialized verbatim into checkpoints and
/// run manifests so results are reproducible from the file alone.
struct TrainConfig {
  std::size_t embed_dim = nn::kEmbedDim;  // fixed by the encoders
  std::size_t batch_pairs = 128;          // B
  std::size_t samples_per_input = 16;     // S
  std::size_t epochs = 100;
  double lr0 = 1e-5;
  double lr_decay = 0.9;
  std::size_t lr_decay_every = 10;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double lambda_ig = 0.0;
  double lambda_wd = 1e-6;
  std::string wd_mode = "frobenius";
  bool normalize_sim = false;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 10;
  std::string data_dir;
  std::string run_dir;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"embed_dim", c.embed_dim},
                     {"batch_pairs", c.batch_pairs},
                     {"samples_per_input", c.samples_per_input},
                     {"epochs", c.epochs},
                     {"lr0", c.lr0},
                     {"lr_decay", c.lr_decay},
                     {"lr_decay_every", c.lr_decay_every},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps_adam", c.eps_adam},
                     {"lambda_ig", c.lambda_ig},
                     {"lambda_wd", c.lambda_wd},
                     {"wd_mode", c.wd_mode},
                     {"normalize_sim", c.normalize_sim},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every},
                     {"data_dir", c.data_dir},
                     {"run_dir", c.run_dir}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.batch_pairs = j.value("batch_pairs", d.batch_pairs);
  c.samples_per_input = j.value("samples_per_input", d.samples_per_input);
  c.epochs = j.value("epochs", d.epochs);
  c.lr0 = j.value("lr0", d.lr0);
  c.lr_decay = j.value("lr_decay", d.lr_decay);
  c.lr_decay_every = j.value("lr_decay_every", d.lr_decay_every);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps_adam = j.value("eps_adam", d.eps_adam);
  c.lambda_ig = j.value("lambda_ig", d.lambda_ig);
  c.lambda_wd = j.value("lambda_wd", d.lambda_wd);
  c.wd_mode = j.value("wd_mode", d.wd_mode);
  c.normalize_sim = j.value("normalize_sim", d.normalize_sim);
  c.seed = j.value("seed", d.seed);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.data_dir = j.value("data_dir", d.data_dir);
  c.run_dir = j.value("run_dir", d.run_dir);
}

/// Stepped decay: lr0 * decay^floor(epoch / every). Epochs 0..every-1 run
/// at lr0.
inline double lr_at(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(cfg.lr_decay, double(epoch / cfg.lr_decay_every));
}

/// First/second moment estimates per parameter plus the shared step count.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;

  static AdamState for_params(const std::vector<ad::Parameter*>& params) {
    AdamState s;
    for (const ad::Parameter* p : params) {
      s.m.push_back(Tensor::zeros(p->value.shape));
      s.v.push_back(Tensor::zeros(p->value.shape));
    }
    return s;
  }
};

/// One bias-corrected Adam update from the gradients currently stored on
/// the parameters.
inline void adam_step(const std::vector<ad::Parameter*>& params, AdamState& state,
                      double lr, double beta1, double beta2, double eps) {
  if (state.m.size() != params.size())
    throw ShapeMismatch("adam state does not match parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    if (!p.trainable) continue;
    if (!state.m[i].same_shape(p.value))
      throw ShapeMismatch("adam moment shape mismatch for " + p.name);
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      state.m[i][k] = beta1 * state.m[i][k] + (1.0 - beta1) * g;
      state.v[i][k] = beta2 * state.v[i][k] + (1.0 - beta2) * g * g;
      const double mhat = state.m[i][k] / bc1;
      const double vhat = state.v[i][k] / bc2;
      p.value[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

struct StepRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  loss::LossBreakdown losses;
  double lr = 0.0;
};

inline std::string step_record_json(const StepRecord& r) {
  nlohmann::json j{{"step", r.step},     {"epoch", r.epoch},
                   {"sim", r.losses.sim}, {"ig", r.losses.ig},
                   {"wd", r.losses.wd},   {"total", r.losses.total},
                   {"lr", r.lr}};
  return j.dump();
}

struct EpochMetrics {
  loss::LossBreakdown mean;
  std::size_t batches = 0;
};

/// The optimization loop. Epochs cover the image pool (the larger dataset):
/// images are shuffled and consumed without replacement, audio is drawn
/// with replacement from the matching digit class. All randomness comes
/// from streams keyed by (purpose, epoch, step), so resuming a run from a
/// checkpoint consumes exactly the same sequences as an unbroken run.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const data::FeaturePool* images,
          const data::FeaturePool* audio)
      : cfg_(std::move(cfg)), model_(cfg_.seed), images_(images), audio_(audio) {
    if (images_->rows() != 28 || images_->cols() != 28)
      throw ShapeMismatch("image features must be 28x28");
    if (audio_->rows() != 100 || audio_->cols() != 80)
      throw ShapeMismatch("audio features must be 100x80");
    adam_ = AdamState::for_params(model_.params());
    wd_mode_ = loss::parse_wd_mode(cfg_.wd_mode);
  }

  const TrainConfig& config() const { return cfg_; }
  nn::Model& model() { return model_; }
  std::size_t next_epoch() const { return next_epoch_; }

  std::size_t batches_per_epoch() const {
    return (images_->size() + cfg_.batch_pairs - 1) / cfg_.batch_pairs;
  }

  /// One pass over the image pool; returns the mean loss breakdown.
  EpochMetrics run_epoch(std::size_t epoch,
                         const std::function<void(const StepRecord&)>& on_step = {}) {
    const std::size_t n_images = images_->size();
    const std::size_t b_pairs = cfg_.batch_pairs;
    if (n_images == 0) throw EmptyClass("image pool is empty");
    if (b_pairs < 2) throw BatchTooSmall("batch_pairs must be >= 2");

    std::vector<std::size_t> order(n_images);
    for (std::size_t i = 0; i < n_images; ++i) order[i] = i;
    RngStream shuffle_rng = RngStream::keyed(cfg_.seed, "shuffle", epoch);
    for (std::size_t i = n_images; i > 1; --i) {
      const std::size_t j = shuffle_rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }

    const std::size_t n_batches = batches_per_epoch();
    const double lr = lr_at(cfg_, epoch);
    loss::LossBreakdown acc;
    for (std::size_t b = 0; b < n_batches; ++b) {
      RngStream batch_rng = RngStream::keyed(cfg_.seed, "batch", epoch, b);
      RngStream eps_rng = RngStream::keyed(cfg_.seed, "eps", epoch, b);
      RngStream neg_rng = RngStream::keyed(cfg_.seed, "neg", epoch, b);

      std::vector<std::size_t> img_rows(b_pairs), aud_rows(b_pairs);
      for (std::size_t i = 0; i < b_pairs; ++i)
        img_rows[i] = order[(b * b_pairs + i) % n_images];
      draw_matched_audio(img_rows, aud_rows, batch_rng);

      const loss::LossBreakdown losses =
          train_step(img_rows, aud_rows, lr, eps_rng, neg_rng);
      acc.sim += losses.sim;
      acc.ig += losses.ig;
      acc.wd += losses.wd;
      acc.total += losses.total;
      if (on_step) {
        StepRecord rec;
        rec.step = adam_.t;
        rec.epoch = epoch;
        rec.losses = losses;
        rec.lr = lr;
        on_step(rec);
      }
    }
    EpochMetrics metrics;
    metrics.batches = n_batches;
    metrics.mean.sim = acc.sim / double(n_batches);
    metrics.mean.ig = acc.ig / double(n_batches);
    metrics.mean.wd = acc.wd / double(n_batches);
    metrics.mean.total = acc.total / double(n_batches);
    metrics.mean.lambda_ig = cfg_.lambda_ig;
    metrics.mean.lambda_wd = cfg_.lambda_wd;
    return metrics;
  }

  /// Run all configured epochs (from next_epoch after a resume), writing
  /// checkpoints every checkpoint_every epochs and a JSON-lines step log.
  void train(const std::function<void(std::size_t, const EpochMetrics&)>& on_epoch = {}) {
    namespace fs = std::filesystem;
    std::ofstream log;
    if (!cfg_.run_dir.empty()) {
      fs::create_directories(fs::path(cfg_.run_dir) / "checkpoints");
      fs::create_directories(fs::path(cfg_.run_dir) / "logs");
      fs::create_directories(fs::path(cfg_.run_dir) / "reports");
      const auto log_path = fs::path(cfg_.run_dir) / "logs" / "train.jsonl";
      log.open(log_path, next_epoch_ == 0 ? std::ios::trunc : std::ios::app);
      if (!log) throw IoError("cannot open " + log_path.string());
      write_config_snapshot();
    }
    for (std::size_t epoch = next_epoch_; epoch < cfg_.epochs; ++epoch) {
      const EpochMetrics metrics = run_epoch(epoch, [&](const StepRecord& r) {
        if (log) log << step_record_json(r) << "\n";
      });
      next_epoch_ = epoch + 1;
      if (log) log.flush();
      if (on_epoch) on_epoch(epoch, metrics);
      if (!cfg_.run_dir.empty() &&
          ((epoch + 1) % cfg_.checkpoint_every == 0 || epoch + 1 == cfg_.epochs)) {
        save_checkpoint(checkpoint_path(epoch + 1));
      }
    }
  }

  std::filesystem::path checkpoint_path(std::size_t epoch) const {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04zu.ckpt", epoch);
    return std::filesystem::path(cfg_.run_dir) / "checkpoints" / name;
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["config"] = cfg_;
    header["epoch"] = next_epoch_;
    header["step"] = adam_.t;
    std::vector<std::pair<std::string, const Tensor*>> extra;
    const auto params = const_cast<nn::Model&>(model_).params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      extra.emplace_back("adam.m." + params[i]->name, &adam_.m[i]);
      extra.emplace_back("adam.v." + params[i]->name, &adam_.v[i]);
    }
    nn::save_model_checkpoint(path, header.dump(), const_cast<nn::Model&>(model_),
                              extra);
  }

  /// Restore parameters, Adam moments and epoch counter from a checkpoint
  /// produced by save_checkpoint.
  void load_checkpoint(const std::filesystem::path& path) {
    nn::NamedTensors ckpt = nn::load_model_checkpoint(path, model_);
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(ckpt.header_json);
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointMismatch("checkpoint header is not valid JSON: " +
                               std::string(e.what()));
    }
    next_epoch_ = header.value("epoch", std::size_t{0});
    adam_.t = header.value("step", std::uint64_t{0});
    const auto params = model_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto m_it = ckpt.tensors.find("adam.m." + params[i]->name);
      auto v_it = ckpt.tensors.find("adam.v." + params[i]->name);
      if (m_it == ckpt.tensors.end() || v_it == ckpt.tensors.end())
        throw CheckpointMismatch("checkpoint lacks Adam state for " +
                                 params[i]->name);
      adam_.m[i] = m_it->second;
      adam_.v[i] = v_it->second;
    }
  }

  static TrainConfig config_from_checkpoint(const std::filesystem::path& path) {
    nn::NamedTensors ckpt = nn::load_named_tensors(path);
    nlohmann::json header = nlohmann::json::parse(ckpt.header_json, nullptr, false);
    if (header.is_discarded() || !header.contains("config"))
      throw CheckpointMismatch("checkpoint header lacks a config in " +
                               path.string());
    return header["config"].get<TrainConfig>();
  }

 private:
  void draw_matched_audio(const std::vector<std::size_t>& img_rows,
                          std::vector<std::size_t>& aud_rows, RngStream& rng) {
    const std::size_t b_pairs = img_rows.size();
    std::vector<std::pair<std::uint64_t, std::uint64_t>> seen(b_pairs);
    for (std::size_t i = 0; i < b_pairs; ++i) {
      const int label = (*images_)[img_rows[i]].label;
      std::size_t tries = 0;
      while (true) {
        if (++tries > 1000)
          throw PairingFailed("cannot draw distinct pairs for class " +
                              std::to_string(label));
        aud_rows[i] = audio_->draw_from_class(label, rng);
        const std::pair<std::uint64_t, std::uint64_t> key{
            (*images_)[img_rows[i]].id, (*audio_)[aud_rows[i]].id};
        bool dup = false;
        for (std::size_t k = 0; k < i; ++k)
          if (seen[k] == key) { dup = true; break; }
        if (!dup) {
          seen[i] = key;
          break;
        }
      }
    }
  }

  loss::LossBreakdown train_step(const std::vector<std::size_t>& img_rows,
                                 const std::vector<std::size_t>& aud_rows,
                                 double lr, RngStream& eps_rng, RngStream& neg_rng) {
    const std::size_t b_pairs = img_rows.size();
    Tensor img_batch({b_pairs, 28, 28, 1});
    Tensor aud_batch({b_pairs, 100, 80, 1});
    for (std::size_t i = 0; i < b_pairs; ++i) {
      const Tensor& px = (*images_)[img_rows[i]].features;
      std::copy(px.data.begin(), px.data.end(),
                img_batch.data.begin() + i * px.size());
      const Tensor& fb = (*audio_)[aud_rows[i]].features;
      std::copy(fb.data.begin(), fb.data.end(),
                aud_batch.data.begin() + i * fb.size());
    }

    ad::Tape tape;
    nn::EncoderOutput img_out = model_.image.forward(tape, img_batch);
    nn::EncoderOutput aud_out = model_.audio.forward(tape, aud_batch);
    ad::Var img_emb =
        nn::sample_embeddings_graph(tape, img_out, cfg_.samples_per_input, eps_rng);
    ad::Var aud_emb =
        nn::sample_embeddings_graph(tape, aud_out, cfg_.samples_per_input, eps_rng);

    const loss::SimilarityLoss sim_loss =
        loss::similarity_loss(img_emb, aud_emb, neg_rng, cfg_.normalize_sim);
    ad::Var ig = loss::ig_loss_graph(img_out, aud_out);
    ad::Var wd = loss::weight_decay_graph(tape, model_.params(), wd_mode_);
    ad::Var total =
        loss::total_loss_graph(sim_loss.value, ig, wd, cfg_.lambda_ig, cfg_.lambda_wd);

    model_.zero_grads();
    tape.backward(total);
    const auto params = model_.params();
    adam_step(params, adam_, lr, cfg_.beta1, cfg_.beta2, cfg_.eps_adam);

    return loss::total_loss(sim_loss.value->value[0], ig->value[0], wd->value[0],
                            cfg_.lambda_ig, cfg_.lambda_wd);
  }

  void write_config_snapshot() const {
    const auto path = std::filesystem::path(cfg_.run_dir) / "config.json";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    nlohmann::json j = cfg_;
    out << j.dump(2) << "\n";
  }

  TrainConfig cfg_;
  nn::Model model_;
  AdamState adam_;
  const data::FeaturePool* images_;
  const data::FeaturePool* audio_;
  loss::WdMode wd_mode_ = loss::WdMode::frobenius;
  std::size_t next_epoch_ = 0;
};

}  // namespace xmodal::train

#endif  // XMODAL_TRAIN_HPP

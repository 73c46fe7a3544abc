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

#ifndef XMODAL_EVAL_HPP
#define XMODAL_EVAL_HPP

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/dataset.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::eval {

enum class Modality { image, audio };

inline const char* to_string(Modality m) {
  return m == Modality::image ? "image" : "audio";
}

/// Sampled embeddings with digit label, modality and source-input id.
struct EmbeddingSet {
  std::size_t dim = nn::kEmbedDim;
  std::vector<double> vectors;  // size() x dim, row-major
  std::vector<int> digit_labels;
  std::vector<Modality> modalities;
  std::vector<std::uint64_t> source_ids;

  std::size_t size() const { return digit_labels.size(); }

  std::span<const double> row(std::size_t i) const {
    return {vectors.data() + i * dim, dim};
  }

  void append(std::span<const double> v, int digit, Modality m, std::uint64_t id) {
    vectors.insert(vectors.end(), v.begin(), v.end());
    digit_labels.push_back(digit);
    modalities.push_back(m);
    source_ids.push_back(id);
  }
};

// ---------------------------------------------------------------------------
// K-means with k-means++ seeding, Lloyd iterations and restarts.
// ---------------------------------------------------------------------------

struct ClusterResult {
  std::vector<int> assignments;
  Tensor centroids;  // k x dim
  double inertia = 0.0;
};

struct KmeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iters = 300;
};

namespace detail {

inline void nearest_centroids(std::span<const double> x, std::size_t m,
                              std::size_t dim, const Tensor& centroids,
                              std::size_t k, std::vector<int>& assign,
                              std::vector<double>& dist2) {
  // ||x - c||^2 = ||x||^2 - 2 x.c + ||c||^2, cross term via GEMM
  ad::ECMap X(x.data(), m, dim), C(centroids.data.data(), k, dim);
  ad::EMat cross = X * C.transpose();  // m x k
  std::vector<double> cnorm(k);
  for (std::size_t c = 0; c < k; ++c)
    cnorm[c] = C.row(Eigen::Index(c)).squaredNorm();
  for (std::size_t i = 0; i < m; ++i) {
    const double xnorm = X.row(Eigen::Index(i)).squaredNorm();
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = xnorm - 2.0 * cross(Eigen::Index(i), Eigen::Index(c)) + cnorm[c];
      if (d < best_d) {
        best_d = d;
        best = int(c);
      }
    }
    assign[i] = best;
    dist2[i] = std::max(0.0, best_d);
  }
}

}  // namespace detail

/// Lloyd's algorithm to an assignment fixpoint (or max_iters), best inertia
/// over `restarts` k-means++ seedings. Empty clusters are re-seeded from
/// the point farthest from its centroid.
inline ClusterResult kmeans(std::span<const double> x, std::size_t m,
                            std::size_t dim, std::size_t k,
                            const KmeansOptions& opts, std::uint64_t seed) {
  if (m < k)
    throw TooFewPoints("kmeans: " + std::to_string(m) + " points for k = " +
                       std::to_string(k));
  ClusterResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  std::vector<int> assign(m);
  std::vector<double> dist2(m);
  for (std::size_t restart = 0; restart < opts.restarts; ++restart) {
    RngStream rng = RngStream::keyed(seed, "kmeans", restart);
    Tensor centroids({k, dim});

    // k-means++ seeding
    std::vector<double> d2(m, std::numeric_limits<double>::infinity());
    std::size_t first = rng.next_below(m);
    std::copy_n(x.data() + first * dim, dim, centroids.data.data());
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        double d = 0.0;
        const double* xi = x.data() + i * dim;
        const double* cc = centroids.data.data() + (c - 1) * dim;
        for (std::size_t j = 0; j < dim; ++j) {
          const double diff = xi[j] - cc[j];
          d += diff * diff;
        }
        d2[i] = std::min(d2[i], d);
        total += d2[i];
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        const double target = rng.next_unit() * total;
        double run = 0.0;
        pick = m - 1;
        for (std::size_t i = 0; i < m; ++i) {
          run += d2[i];
          if (run >= target) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.next_below(m);
      }
      std::copy_n(x.data() + pick * dim, dim, centroids.data.data() + c * dim);
    }

    // Lloyd iterations
    std::vector<int> prev(m, -1);
    double inertia = 0.0;
    for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
      detail::nearest_centroids(x, m, dim, centroids, k, assign, dist2);
      inertia = 0.0;
      for (double d : dist2) inertia += d;
      if (assign == prev) break;
      prev = assign;

      std::vector<std::size_t> counts(k, 0);
      std::fill(centroids.data.begin(), centroids.data.end(), 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        counts[assign[i]] += 1;
        double* cc = centroids.data.data() + std::size_t(assign[i]) * dim;
        const double* xi = x.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) cc[j] += xi[j];
      }
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] == 0) {
          // re-seed from the farthest point
          std::size_t far = 0;
          double far_d = -1.0;
          for (std::size_t i = 0; i < m; ++i)
            if (dist2[i] > far_d) {
              far_d = dist2[i];
              far = i;
            }
          std::copy_n(x.data() + far * dim, dim, centroids.data.data() + c * dim);
          dist2[far] = 0.0;
        } else {
          double* cc = centroids.data.data() + c * dim;
          for (std::size_t j = 0; j < dim; ++j) cc[j] /= double(counts[c]);
        }
      }
    }
    detail::nearest_centroids(x, m, dim, centroids, k, assign, dist2);
    inertia = 0.0;
    for (double d : dist2) inertia += d;
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.assignments = assign;
      best.centroids = centroids;
    }
  }
  return best;
}

/// Eq.-style cluster purity: sum over clusters of the majority class count,
/// divided by the number of points.
inline double cluster_purity(std::span<const int> assignments,
                             std::span<const int> digit_labels, std::size_t k) {
  if (assignments.size() != digit_labels.size())
    throw LengthMismatch("cluster_purity: " + std::to_string(assignments.size()) +
                         " assignments vs " + std::to_string(digit_labels.size()) +
                         " labels");
  if (assignments.empty()) throw LengthMismatch("cluster_purity: empty input");
  int max_label = 0;
  for (int l : digit_labels) max_label = std::max(max_label, l);
  std::vector<std::vector<std::size_t>> counts(k, std::vector<std::size_t>(max_label + 1, 0));
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const int c = assignments[i];
    if (c < 0 || std::size_t(c) >= k)
      throw LengthMismatch("cluster_purity: assignment " + std::to_string(c) +
                           " out of range for k = " + std::to_string(k));
    counts[c][digit_labels[i]] += 1;
  }
  std::size_t majority_total = 0;
  for (std::size_t c = 0; c < k; ++c)
    majority_total += *std::max_element(counts[c].begin(), counts[c].end());
  return double(majority_total) / double(assignments.size());
}

// ---------------------------------------------------------------------------
// Soft-margin RBF-kernel SVM via sequential minimal optimization.
// ---------------------------------------------------------------------------

struct SvmModel {
  std::vector<double> coef;  // alpha_i * y_i over support vectors
  std::vector<std::vector<double>> support;
  double rho = 0.0;  // decision f(x) = sum coef_i K(sv_i, x) - rho
  double gamma = 0.0;
  double dual_objective = 0.0;
  bool converged = true;
  std::size_t iterations = 0;

  std::size_t support_vector_count() const { return support.size(); }

  double decision(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      double d = 0.0;
      const auto& sv = support[i];
      for (std::size_t j = 0; j < sv.size(); ++j) {
        const double diff = sv[j] - x[j];
        d += diff * diff;
      }
      s += coef[i] * std::exp(-gamma * d);
    }
    return s - rho;
  }

  int predict(std::span<const double> x) const { return decision(x) >= 0.0 ? 1 : -1; }
};

/// Solve the soft-margin kernel dual by SMO with maximal-violating-pair
/// working set selection. Terminates when every KKT violation is below
/// `tol`. Non-convergence inside the iteration cap is reported on the
/// model, not thrown.
inline SvmModel svm_train_smo(std::span<const double> x, std::size_t n,
                              std::size_t dim, std::span<const int> y, double C,
                              double gamma, double tol = 1e-3,
                              std::size_t max_iter = 0) {
  if (n < 2) throw TooFewPoints("svm: need at least 2 points");
  bool has_pos = false, has_neg = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] == 1) has_pos = true;
    else if (y[i] == -1) has_neg = true;
    else throw Degenerate("svm: labels must be +1/-1");
  }
  if (!has_pos || !has_neg) throw Degenerate("svm: both classes required");
  if (max_iter == 0) max_iter = std::max<std::size_t>(10'000'000, 1000 * n);

  // full kernel cache
  std::vector<double> kmat(n * n);
  {
    ad::ECMap X(x.data(), n, dim);
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) norms[i] = X.row(Eigen::Index(i)).squaredNorm();
    ad::EMap K(kmat.data(), n, n);
    K.noalias() = X * X.transpose();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double d2 = std::max(0.0, norms[i] + norms[j] - 2.0 * kmat[i * n + j]);
        kmat[i * n + j] = std::exp(-gamma * d2);
      }
  }
  auto q = [&](std::size_t i, std::size_t j) {
    return double(y[i]) * double(y[j]) * kmat[i * n + j];
  };

  std::vector<double> alpha(n, 0.0);
  std::vector<double> grad(n, -1.0);  // gradient of 1/2 a'Qa - e'a

  SvmModel model;
  model.gamma = gamma;
  std::size_t iter = 0;
  double m_up = 0.0, m_low = 0.0;
  while (true) {
    // maximal violating pair
    std::ptrdiff_t i = -1, j = -1;
    m_up = -std::numeric_limits<double>::infinity();
    m_low = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      const double v = -double(y[t]) * grad[t];
      const bool up = (y[t] == 1 && alpha[t] < C) || (y[t] == -1 && alpha[t] > 0);
      const bool low = (y[t] == 1 && alpha[t] > 0) || (y[t] == -1 && alpha[t] < C);
      if (up && v > m_up) {
        m_up = v;
        i = std::ptrdiff_t(t);
      }
      if (low && v < m_low) {
        m_low = v;
        j = std::ptrdiff_t(t);
      }
    }
    if (i < 0 || j < 0 || m_up - m_low < tol) break;
    if (iter >= max_iter) {
      model.converged = false;
      break;
    }
    ++iter;

    const std::size_t ii = std::size_t(i), jj = std::size_t(j);
    const double old_ai = alpha[ii], old_aj = alpha[jj];
    if (y[ii] != y[jj]) {
      double quad = q(ii, ii) + q(jj, jj) + 2.0 * kmat[ii * n + jj];
      if (quad <= 0.0) quad = 1e-12;
      const double delta = (-grad[ii] - grad[jj]) / quad;
      const double diff = alpha[ii] - alpha[jj];
      alpha[ii] += delta;
      alpha[jj] += delta;
      if (diff > 0.0 && alpha[jj] < 0.0) {
        alpha[jj] = 0.0;
        alpha[ii] = diff;
      } else if (diff <= 0.0 && alpha[ii] < 0.0) {
        alpha[ii] = 0.0;
        alpha[jj] = -diff;
      }
      if (diff > C - C && false) {}  // keep structure parallel to libsvm
      if (diff > 0.0) {
        if (alpha[ii] > C) {
          alpha[ii] = C;
          alpha[jj] = C - diff;
        }
      } else {
        if (alpha[jj] > C) {
          alpha[jj] = C;
          alpha[ii] = C + diff;
        }
      }
    } else {
      double quad = q(ii, ii) + q(jj, jj) - 2.0 * kmat[ii * n + jj];
      if (quad <= 0.0) quad = 1e-12;
      const double delta = (grad[ii] - grad[jj]) / quad;
      const double total = alpha[ii] + alpha[jj];
      alpha[ii] -= delta;
      alpha[jj] += delta;
      if (total > C) {
        if (alpha[ii] > C) {
          alpha[ii] = C;
          alpha[jj] = total - C;
        } else if (alpha[jj] > C) {
          alpha[jj] = C;
          alpha[ii] = total - C;
        }
      } else {
        if (alpha[jj] < 0.0) {
          alpha[jj] = 0.0;
          alpha[ii] = total;
        } else if (alpha[ii] < 0.0) {
          alpha[ii] = 0.0;
          alpha[jj] = total;
        }
      }
    }
    const double dai = alpha[ii] - old_ai, daj = alpha[jj] - old_aj;
    for (std::size_t t = 0; t < n; ++t)
      grad[t] += q(t, ii) * dai + q(t, jj) * daj;
  }
  model.iterations = iter;
  model.rho = -(m_up + m_low) / 2.0;

  double asum = 0.0, ag = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    asum += alpha[t];
    ag += alpha[t] * grad[t];
  }
  model.dual_objective = 0.5 * (asum - ag);

  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 1e-12) {
      model.coef.push_back(alpha[t] * double(y[t]));
      model.support.emplace_back(x.begin() + t * dim, x.begin() + (t + 1) * dim);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Modality probe: stratified split, 3-fold C selection, held-out accuracy.
// ---------------------------------------------------------------------------

struct ProbeResult {
  double chosen_C = 1.0;
  double gamma = 0.0;
  std::vector<double> fold_accuracies;
  double test_accuracy = 0.0;
  std::size_t support_vectors = 0;
  bool converged = true;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

namespace detail {

inline double svm_accuracy(const SvmModel& model, std::span<const double> x,
                           std::span<const int> y, std::size_t dim) {
  std::size_t hits = 0;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i)
    if (model.predict({x.data() + i * dim, dim}) == y[i]) ++hits;
  return double(hits) / double(n);
}

/// Mean per-coordinate variance of a flattened n x dim matrix.
inline double mean_coordinate_variance(std::span<const double> x, std::size_t n,
                                       std::size_t dim) {
  double total = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i * dim + j];
    mean /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = x[i * dim + j] - mean;
      var += d * d;
    }
    total += var / double(n);
  }
  return total / double(dim);
}

}  // namespace detail

/// Train/test-split the probe set stratified by modality (1600/552 at the
/// reference size of 2152, proportional otherwise), pick C over
/// {0.01, 0.1, 1, 10, 100} by 3-fold cross-validation, refit on the full
/// training split, and report held-out accuracy. Modality labels: image
/// +1, audio -1. gamma = 1 / (dim * mean per-coordinate variance of the
/// training split).
inline ProbeResult select_C_and_evaluate(const EmbeddingSet& probe,
                                         std::uint64_t seed) {
  const std::size_t dim = probe.dim;
  std::vector<std::size_t> img_idx, aud_idx;
  for (std::size_t i = 0; i < probe.size(); ++i)
    (probe.modalities[i] == Modality::image ? img_idx : aud_idx).push_back(i);
  if (img_idx.empty() || aud_idx.empty())
    throw Degenerate("probe needs embeddings of both modalities");

  RngStream rng = RngStream::keyed(seed, "probe.split");
  auto shuffle = [&rng](std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[rng.next_below(i)]);
  };
  shuffle(img_idx);
  shuffle(aud_idx);

  // 1600 of 2152 at the reference protocol size, scaled proportionally.
  auto train_count = [](std::size_t total) {
    return std::size_t(std::llround(double(total) * 1600.0 / 2152.0));
  };
  const std::size_t img_train = train_count(img_idx.size());
  const std::size_t aud_train = train_count(aud_idx.size());

  auto flatten = [&](const std::vector<std::size_t>& rows, std::size_t lo,
                     std::size_t hi, std::vector<double>& xs, std::vector<int>& ys,
                     int label) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto r = probe.row(rows[i]);
      xs.insert(xs.end(), r.begin(), r.end());
      ys.push_back(label);
    }
  };
  std::vector<double> train_x, test_x;
  std::vector<int> train_y, test_y;
  flatten(img_idx, 0, img_train, train_x, train_y, +1);
  flatten(aud_idx, 0, aud_train, train_x, train_y, -1);
  flatten(img_idx, img_train, img_idx.size(), test_x, test_y, +1);
  flatten(aud_idx, aud_train, aud_idx.size(), test_x, test_y, -1);
  const std::size_t n_train = train_y.size();

  ProbeResult result;
  result.train_count = n_train;
  result.test_count = test_y.size();
  result.gamma = 1.0 / (double(dim) *
                        std::max(1e-12, detail::mean_coordinate_variance(
                                            train_x, n_train, dim)));

  const double c_grid[] = {0.01, 0.1, 1.0, 10.0, 100.0};
  const std::size_t n_folds = 3;
  double best_mean = -1.0;
  double best_c = c_grid[0];
  std::vector<double> best_fold_accs;
  for (double c_value : c_grid) {
    std::vector<double> fold_accs;
    for (std::size_t fold = 0; fold < n_folds; ++fold) {
      std::vector<double> fx, vx;
      std::vector<int> fy, vy;
      for (std::size_t i = 0; i < n_train; ++i) {
        const bool held_out = i % n_folds == fold;
        auto& xs = held_out ? vx : fx;
        auto& ys = held_out ? vy : fy;
        xs.insert(xs.end(), train_x.begin() + i * dim, train_x.begin() + (i + 1) * dim);
        ys.push_back(train_y[i]);
      }
      const SvmModel m =
          svm_train_smo(fx, fy.size(), dim, fy, c_value, result.gamma);
      fold_accs.push_back(detail::svm_accuracy(m, vx, vy, dim));
    }
    double mean_acc = 0.0;
    for (double a : fold_accs) mean_acc += a;
    mean_acc /= double(n_folds);
    if (mean_acc > best_mean + 1e-12) {
      best_mean = mean_acc;
      best_c = c_value;
      best_fold_accs = fold_accs;
    }
  }
  result.chosen_C = best_c;
  result.fold_accuracies = best_fold_accs;

  const SvmModel final_model =
      svm_train_smo(train_x, n_train, dim, train_y, best_c, result.gamma);
  result.support_vectors = final_model.support_vector_count();
  result.converged = final_model.converged;
  result.test_accuracy = detail::svm_accuracy(final_model, test_x, test_y, dim);
  return result;
}

// ---------------------------------------------------------------------------
// Embedding collection from a trained model.
// ---------------------------------------------------------------------------

struct TestEmbeddings {
  EmbeddingSet purity_set;  // S samples per input, both modalities balanced
  EmbeddingSet probe_set;   // one sample per input
};

namespace detail {

inline std::vector<nn::Posterior> encode_pool_rows(nn::Model& model,
                                                   const data::FeaturePool& pool,
                                                   const std::vector<std::size_t>& rows,
                                                   bool is_image) {
  std::vector<nn::Posterior> out;
  out.reserve(rows.size());
  const std::size_t chunk = 128;
  const std::size_t r = pool.rows(), c = pool.cols();
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::size_t count = std::min(chunk, rows.size() - start);
    Tensor batch({count, r, c, 1});
    for (std::size_t i = 0; i < count; ++i) {
      const Tensor& f = pool[rows[start + i]].features;
      std::copy(f.data.begin(), f.data.end(), batch.data.begin() + i * f.size());
    }
    ad::Tape tape;
    nn::EncoderOutput enc = is_image ? model.image.forward(tape, batch)
                                     : model.audio.forward(tape, batch);
    for (auto& p : nn::posteriors_from(enc)) out.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

struct CollectOptions {
  std::size_t samples_per_input = 16;
  std::uint64_t seed = 1234;
};

/// Encode the test pools and sample embeddings per the evaluation
/// protocol: P = min(#audio, #image) inputs per modality (audio uses its
/// first P records, images are drawn uniformly without replacement), S
/// samples per input for the clustering set and one per input for the
/// probe set.
inline TestEmbeddings collect_test_embeddings(nn::Model& model,
                                              const data::FeaturePool& image_test,
                                              const data::FeaturePool& audio_test,
                                              const CollectOptions& opts = {}) {
  if (image_test.size() == 0 || audio_test.size() == 0)
    throw TooFewPoints("collect_test_embeddings: empty test pool");
  const std::size_t per_modality = std::min(image_test.size(), audio_test.size());

  std::vector<std::size_t> aud_rows(per_modality);
  for (std::size_t i = 0; i < per_modality; ++i) aud_rows[i] = i;

  std::vector<std::size_t> img_all(image_test.size());
  for (std::size_t i = 0; i < img_all.size(); ++i) img_all[i] = i;
  RngStream pick = RngStream::keyed(opts.seed, "eval.images");
  for (std::size_t i = 0; i < per_modality; ++i) {
    const std::size_t j = i + pick.next_below(img_all.size() - i);
    std::swap(img_all[i], img_all[j]);
  }
  std::vector<std::size_t> img_rows(img_all.begin(), img_all.begin() + per_modality);

  const auto img_post = detail::encode_pool_rows(model, image_test, img_rows, true);
  const auto aud_post = detail::encode_pool_rows(model, audio_test, aud_rows, false);

  TestEmbeddings out;
  RngStream sample_rng = RngStream::keyed(opts.seed, "eval.samples");
  RngStream probe_rng = RngStream::keyed(opts.seed, "eval.probe");
  std::vector<double> z(nn::kEmbedDim);
  auto draw = [&](const nn::Posterior& p, RngStream& rng) {
    for (std::size_t k = 0; k < nn::kEmbedDim; ++k)
      z[k] = p.mu[k] + std::exp(0.5 * p.logvar[k]) * rng.next_normal();
    return std::span<const double>(z);
  };
  for (std::size_t i = 0; i < per_modality; ++i) {
    const auto& img_rec = image_test[img_rows[i]];
    for (std::size_t s = 0; s < opts.samples_per_input; ++s)
      out.purity_set.append(draw(img_post[i], sample_rng), img_rec.label,
                            Modality::image, img_rec.id);
    out.probe_set.append(draw(img_post[i], probe_rng), img_rec.label,
                         Modality::image, img_rec.id);
  }
  for (std::size_t i = 0; i < per_modality; ++i) {
    const auto& aud_rec = audio_test[aud_rows[i]];
    for (std::size_t s = 0; s < opts.samples_per_input; ++s)
      out.purity_set.append(draw(aud_post[i], sample_rng), aud_rec.label,
                            Modality::audio, aud_rec.id);
    out.probe_set.append(draw(aud_post[i], probe_rng), aud_rec.label,
                         Modality::audio, aud_rec.id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full evaluation: cluster purity + modality probe.
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::size_t samples_per_input = 16;
  std::size_t kmeans_k = 10;
  KmeansOptions kmeans;
  std::uint64_t seed = 1234;
};

struct EvalReport {
  std::size_t kmeans_k = 10;
  double purity = 0.0;
  double inertia = 0.0;
  ProbeResult probe;
  std::size_t purity_points = 0;
  std::size_t inputs_per_modality = 0;
};

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"kmeans_k", r.kmeans_k},
                     {"purity", r.purity},
                     {"inertia", r.inertia},
                     {"probe_accuracy", r.probe.test_accuracy},
                     {"chosen_C", r.probe.chosen_C},
                     {"gamma", r.probe.gamma},
                     {"fold_accuracies", r.probe.fold_accuracies},
                     {"support_vectors", r.probe.support_vectors},
                     {"probe_converged", r.probe.converged},
                     {"probe_train_count", r.probe.train_count},
                     {"probe_test_count", r.probe.test_count},
                     {"purity_points", r.purity_points},
                     {"inputs_per_modality", r.inputs_per_modality}};
}

inline EvalReport evaluate_embeddings(const TestEmbeddings& emb,
                                      const EvalOptions& opts) {
  EvalReport report;
  report.kmeans_k = opts.kmeans_k;
  report.purity_points = emb.purity_set.size();
  report.inputs_per_modality = emb.probe_set.size() / 2;
  const ClusterResult clusters =
      kmeans(emb.purity_set.vectors, emb.purity_set.size(), emb.purity_set.dim,
             opts.kmeans_k, opts.kmeans, opts.seed);
  report.purity = cluster_purity(clusters.assignments, emb.purity_set.digit_labels,
                                 opts.kmeans_k);
  report.inertia = clusters.inertia;
  report.probe = select_C_and_evaluate(emb.probe_set, opts.seed);
  return report;
}

inline EvalReport evaluate_model(nn::Model& model, const data::FeaturePool& image_test,
                                 const data::FeaturePool& audio_test,
                                 const EvalOptions& opts = {}) {
  CollectOptions copts;
  copts.samples_per_input = opts.samples_per_input;
  copts.seed = opts.seed;
  const TestEmbeddings emb = collect_test_embeddings(model, image_test, audio_test, copts);
  return evaluate_embeddings(emb, opts);
}

// ---------------------------------------------------------------------------
// CSV export (lossless shortest round-trip doubles).
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void export_embeddings(const EmbeddingSet& set, std::ostream& out) {
  out << "id,modality,digit";
  for (std::size_t k = 0; k < set.dim; ++k) out << ",e" << k;
  out << "\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.source_ids[i] << "," << to_string(set.modalities[i]) << ","
        << set.digit_labels[i];
    const auto r = set.row(i);
    for (double v : r) out << "," << format_double(v);
    out << "\n";
  }
}

inline void export_embeddings(const EmbeddingSet& set,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  export_embeddings(set, out);
  if (!out) throw IoError("short write to " + path.string());
}

/// One sweep table row; the CSV columns mirror the tuning table.
struct SweepRow {
  double lambda_ig = 0.0;
  double purity = 0.0;
  double probe_accuracy = 0.0;
  double chosen_C = 1.0;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "lambda_ig,purity,probe_accuracy,chosen_C\n";
  for (const auto& r : rows) {
    out += format_double(r.lambda_ig);
    out += ",";
    out += format_double(r.purity);
    out += ",";
    out += format_double(r.probe_accuracy);
    out += ",";
    out += format_double(r.chosen_C);
    out += "\n";
  }
  return out;
}

}  // namespace xmodal::eval

#endif  // XMODAL_EVAL_HPP

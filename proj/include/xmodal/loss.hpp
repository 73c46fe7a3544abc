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

#ifndef XMODAL_LOSS_HPP
#define XMODAL_LOSS_HPP

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "xmodal/autodiff.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"

namespace xmodal::loss {

/// Dot-product similarity between two embeddings.
inline double sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw ShapeMismatch("sim: vector lengths " + std::to_string(u.size()) + " and " +
                        std::to_string(v.size()) + " differ");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

/// One impostor index j != k per anchor, uniform over the other M-1 rows.
inline std::vector<std::size_t> draw_negatives(std::size_t m, RngStream& rng) {
  std::vector<std::size_t> js(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t r = rng.next_below(m - 1);
    js[k] = r >= k ? r + 1 : r;
  }
  return js;
}

struct SimilarityLoss {
  ad::Var value = nullptr;
  std::vector<std::size_t> negatives;  // impostor row per anchor
};

/// Margin ranking loss over positive-paired embedding rows. For each anchor
/// row k an impostor row j != k is drawn (any digit class), and both hinges
///   max(0, 1 - sim(a_k, v_k) + sim(a_k, v_j))
///   max(0, 1 - sim(a_k, v_k) + sim(v_k, a_j))
/// are accumulated. The result is the unnormalized sum unless `normalize`
/// divides by the number of anchors.
inline SimilarityLoss similarity_loss(ad::Var img_emb, ad::Var aud_emb,
                                      RngStream& rng, bool normalize = false) {
  if (img_emb->value.rank() != 2 || !img_emb->value.same_shape(aud_emb->value))
    throw ShapeMismatch("similarity_loss: embedding matrices must match, got " +
                        Tensor::shape_str(img_emb->value.shape) + " and " +
                        Tensor::shape_str(aud_emb->value.shape));
  const std::size_t m = img_emb->value.dim(0);
  if (m < 2)
    throw BatchTooSmall("similarity_loss needs at least 2 pairs, got " +
                        std::to_string(m));
  using namespace ad;
  SimilarityLoss result;
  result.negatives = draw_negatives(m, rng);

  Var pos = row_sum(mul(aud_emb, img_emb));                    // sim(a_k, v_k)
  Var v_imp = gather_rows(img_emb, result.negatives);
  Var a_imp = gather_rows(aud_emb, result.negatives);
  Var neg_av = row_sum(mul(aud_emb, v_imp));                   // sim(a_k, v_j)
  Var neg_va = row_sum(mul(img_emb, a_imp));                   // sim(v_k, a_j)
  Var hinge1 = relu(add_scalar(sub(neg_av, pos), 1.0));
  Var hinge2 = relu(add_scalar(sub(neg_va, pos), 1.0));
  Var total = add(sum(hinge1), sum(hinge2));
  result.value = normalize ? mul_scalar(total, 1.0 / double(m)) : total;
  return result;
}

/// KL(N(mu, diag sigma^2) || N(0, I)) in closed form.
inline double kl_to_unit_gaussian(const nn::Posterior& p) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.mu.size(); ++k) {
    const double var = std::exp(p.logvar[k]);
    s += p.mu[k] * p.mu[k] + var - p.logvar[k] - 1.0;
  }
  return 0.5 * s;
}

/// Mean over pairs of the summed image+audio divergences from the prior.
inline double ig_loss(const std::vector<nn::Posterior>& posteriors_v,
                      const std::vector<nn::Posterior>& posteriors_a) {
  if (posteriors_v.size() != posteriors_a.size())
    throw LengthMismatch("ig_loss: posterior lists differ in length");
  if (posteriors_v.empty()) throw LengthMismatch("ig_loss: empty posterior lists");
  double s = 0.0;
  for (std::size_t i = 0; i < posteriors_v.size(); ++i)
    s += kl_to_unit_gaussian(posteriors_v[i]) + kl_to_unit_gaussian(posteriors_a[i]);
  return s / double(posteriors_v.size());
}

/// Graph KL summed over a batch: 0.5 * sum(mu^2 + exp(logvar) - logvar - 1).
inline ad::Var kl_sum_graph(ad::Var mu, ad::Var logvar) {
  using namespace ad;
  Var inner = add(mul(mu, mu), add_scalar(sub(exp_(logvar), logvar), -1.0));
  return mul_scalar(sum(inner), 0.5);
}

/// Graph IG loss: per-pair average of both modalities' divergences.
inline ad::Var ig_loss_graph(const nn::EncoderOutput& img,
                             const nn::EncoderOutput& aud) {
  const std::size_t n = img.mu->value.dim(0);
  ad::Var total = ad::add(kl_sum_graph(img.mu, img.logvar),
                          kl_sum_graph(aud.mu, aud.logvar));
  return ad::mul_scalar(total, 1.0 / double(n));
}

enum class WdMode { frobenius, frobenius_squared };

inline WdMode parse_wd_mode(const std::string& s) {
  if (s == "frobenius") return WdMode::frobenius;
  if (s == "frobenius_squared") return WdMode::frobenius_squared;
  throw Error("unknown weight decay mode '" + s + "'");
}

inline std::string to_string(WdMode m) {
  return m == WdMode::frobenius ? "frobenius" : "frobenius_squared";
}

/// Sum over weight matrices/kernels of the Frobenius norm (default) or of
/// the squared norm. Biases are excluded in both modes.
inline double weight_decay_term(std::span<ad::Parameter* const> params, WdMode mode) {
  double total = 0.0;
  for (const ad::Parameter* p : params) {
    if (!p->is_weight) continue;
    double sq = 0.0;
    for (double v : p->value.data) sq += v * v;
    total += mode == WdMode::frobenius ? std::sqrt(sq) : sq;
  }
  return total;
}

inline ad::Var weight_decay_graph(ad::Tape& tape,
                                  std::span<ad::Parameter* const> params,
                                  WdMode mode) {
  using namespace ad;
  Var total = nullptr;
  for (ad::Parameter* p : params) {
    if (!p->is_weight) continue;
    Var sq = sumsq(tape.param(*p));
    Var term = mode == WdMode::frobenius ? sqrt_(sq) : sq;
    total = total ? add(total, term) : term;
  }
  if (!total) total = tape.constant(Tensor::scalar(0.0));
  return total;
}

/// Per-step loss components. total = sim + lambda_ig*ig + lambda_wd*wd by
/// construction.
struct LossBreakdown {
  double sim = 0.0;
  double ig = 0.0;
  double wd = 0.0;
  double total = 0.0;
  double lambda_ig = 0.0;
  double lambda_wd = 0.0;
};

inline LossBreakdown total_loss(double sim_value, double ig_value, double wd_value,
                                double lambda_ig, double lambda_wd) {
  LossBreakdown b;
  b.sim = sim_value;
  b.ig = ig_value;
  b.wd = wd_value;
  b.lambda_ig = lambda_ig;
  b.lambda_wd = lambda_wd;
  b.total = sim_value + lambda_ig * ig_value + lambda_wd * wd_value;
  return b;
}

/// Graph composite with the same association order as total_loss().
inline ad::Var total_loss_graph(ad::Var sim_value, ad::Var ig_value, ad::Var wd_value,
                                double lambda_ig, double lambda_wd) {
  using namespace ad;
  return add(add(sim_value, mul_scalar(ig_value, lambda_ig)),
             mul_scalar(wd_value, lambda_wd));
}

}  // namespace xmodal::loss

#endif  // XMODAL_LOSS_HPP

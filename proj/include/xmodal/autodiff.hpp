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

#ifndef XMODAL_AUTODIFF_HPP
#define XMODAL_AUTODIFF_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::ad {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

/// Named trainable tensor. Weight matrices/kernels participate in weight
/// decay; biases (is_weight = false) do not.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool is_weight = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool weight = true)
      : name(std::move(n)), value(std::move(v)),
        grad(Tensor::zeros(value.shape)), is_weight(weight) {}

  std::size_t size() const { return value.size(); }
};

class Tape;

struct Node {
  Tape* tape = nullptr;
  Tensor value;
  Tensor grad;
  std::vector<Node*> parents;
  std::function<void()> backprop;
  Parameter* param = nullptr;
  bool needs_grad = false;
  bool marked = false;
};

using Var = Node*;

/// Reverse-mode tape over dense float64 tensors. Nodes are recorded in
/// creation order, which is a topological order by construction; backward()
/// walks the record once in reverse, accumulating gradients additively
/// across fan-out. A tape is single-threaded and owns every node until it
/// is destroyed; independent tapes may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that does not require gradients.
  Var constant(Tensor v) { return alloc(std::move(v)); }

  /// Leaf bound to a Parameter; repeated calls with the same Parameter
  /// return the same node so all uses share one gradient accumulator.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return it->second;
    Var n = alloc(p.value);
    n->param = &p;
    n->needs_grad = p.trainable;
    param_nodes_[&p] = n;
    return n;
  }

  /// Record an op node. `bp` receives the finished node and must add the
  /// node's grad contributions into its parents' grads.
  Var make(Tensor value, std::vector<Var> parents, std::function<void(Node*)> bp) {
    Var n = alloc(std::move(value));
    n->parents = std::move(parents);
    for (Var p : n->parents) n->needs_grad = n->needs_grad || p->needs_grad;
    if (n->needs_grad && bp) {
      n->backprop = [n, f = std::move(bp)]() { f(n); };
    }
    return n;
  }

  /// Backpropagate from a scalar loss. Populates grad on every Parameter
  /// registered with this tape; parameters not reachable from the loss
  /// end up with zero gradient.
  void backward(Var loss) {
    if (loss->value.size() != 1) {
      throw NonScalarLoss("backward requires a scalar loss, got shape " +
                          Tensor::shape_str(loss->value.shape));
    }
    for (auto& n : nodes_) n->marked = false;
    mark(loss);
    loss->grad.data[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node* n = it->get();
      if (n->marked && n->backprop) n->backprop();
    }
    for (auto& [p, n] : param_nodes_) {
      if (!p->trainable) continue;
      p->grad = n->grad;
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  Var alloc(Tensor v) {
    auto n = std::make_unique<Node>();
    n->tape = this;
    n->grad = Tensor::zeros(v.shape);
    n->value = std::move(v);
    nodes_.push_back(std::move(n));
    return nodes_.back().get();
  }

  void mark(Node* root) {
    if (!root->needs_grad) return;
    stack_.clear();
    stack_.push_back(root);
    while (!stack_.empty()) {
      Node* n = stack_.back();
      stack_.pop_back();
      if (n->marked || !n->needs_grad) continue;
      n->marked = true;
      for (Node* p : n->parents) stack_.push_back(p);
    }
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<Parameter*, Var> param_nodes_;
  std::vector<Node*> stack_;
};

namespace detail {

inline void axpy(Tensor& dst, const Tensor& src, double a = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

inline Tape& tape_of(Var a) { return *a->tape; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  detail::axpy(out, b->value);
  return detail::tape_of(a).make(std::move(out), {a, b}, [a, b](Node* self) {
    if (a->needs_grad) detail::axpy(a->grad, self->grad);
    if (b->needs_grad) detail::axpy(b->grad, self->grad);
  });
}

inline Var sub(Var a, Var b) {
  require_same_shape(a->value, b->value, "sub");
  Tensor out = a->value;
  detail::axpy(out, b->value, -1.0);
  return detail::tape_of(a).make(std::move(out), {a, b}, [a, b](Node* self) {
    if (a->needs_grad) detail::axpy(a->grad, self->grad);
    if (b->needs_grad) detail::axpy(b->grad, self->grad, -1.0);
  });
}

inline Var mul(Var a, Var b) {
  require_same_shape(a->value, b->value, "mul");
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return detail::tape_of(a).make(std::move(out), {a, b}, [a, b](Node* self) {
    if (a->needs_grad)
      for (std::size_t i = 0; i < a->grad.size(); ++i)
        a->grad[i] += self->grad[i] * b->value[i];
    if (b->needs_grad)
      for (std::size_t i = 0; i < b->grad.size(); ++i)
        b->grad[i] += self->grad[i] * a->value[i];
  });
}

inline Var add_scalar(Var a, double c) {
  Tensor out = a->value;
  for (double& v : out.data) v += c;
  return detail::tape_of(a).make(std::move(out), {a}, [a](Node* self) {
    detail::axpy(a->grad, self->grad);
  });
}

inline Var mul_scalar(Var a, double c) {
  Tensor out = a->value;
  for (double& v : out.data) v *= c;
  return detail::tape_of(a).make(std::move(out), {a}, [a, c](Node* self) {
    detail::axpy(a->grad, self->grad, c);
  });
}

inline Var neg(Var a) { return mul_scalar(a, -1.0); }

inline Var exp_(Var a) {
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->value[i]);
  return detail::tape_of(a).make(std::move(out), {a}, [a](Node* self) {
    for (std::size_t i = 0; i < a->grad.size(); ++i)
      a->grad[i] += self->grad[i] * self->value[i];
  });
}

/// Elementwise square root. Not differentiable at 0; callers keep weights
/// away from exact zero.
inline Var sqrt_(Var a) {
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a->value[i]);
  return detail::tape_of(a).make(std::move(out), {a}, [a](Node* self) {
    for (std::size_t i = 0; i < a->grad.size(); ++i)
      a->grad[i] += self->grad[i] * 0.5 / self->value[i];
  });
}

/// max(0, x). Subgradient at 0 is 0; also serves as the hinge.
inline Var relu(Var a) {
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  return detail::tape_of(a).make(std::move(out), {a}, [a](Node* self) {
    for (std::size_t i = 0; i < a->grad.size(); ++i)
      if (a->value[i] > 0.0) a->grad[i] += self->grad[i];
  });
}

/// Clamp into [lo, hi]; gradient passes only strictly inside the range.
inline Var clamp(Var a, double lo, double hi) {
  Tensor out(a->value.shape);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(std::max(a->value[i], lo), hi);
  return detail::tape_of(a).make(std::move(out), {a}, [a, lo, hi](Node* self) {
    for (std::size_t i = 0; i < a->grad.size(); ++i)
      if (a->value[i] > lo && a->value[i] < hi) a->grad[i] += self->grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a->value.data) s += v;
  return detail::tape_of(a).make(Tensor::scalar(s), {a}, [a](Node* self) {
    const double g = self->grad[0];
    for (double& v : a->grad.data) v += g;
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a->value.size());
  double s = 0.0;
  for (double v : a->value.data) s += v;
  return detail::tape_of(a).make(Tensor::scalar(s / n), {a}, [a, n](Node* self) {
    const double g = self->grad[0] / n;
    for (double& v : a->grad.data) v += g;
  });
}

/// Sum of squares of all entries; gradient 2x.
inline Var sumsq(Var a) {
  double s = 0.0;
  for (double v : a->value.data) s += v * v;
  return detail::tape_of(a).make(Tensor::scalar(s), {a}, [a](Node* self) {
    const double g = 2.0 * self->grad[0];
    for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g * a->value[i];
  });
}

/// Row-wise sum of a rank-2 tensor: (N x D) -> (N).
inline Var row_sum(Var a) {
  if (a->value.rank() != 2)
    throw ShapeMismatch("row_sum expects a rank-2 tensor, got " +
                        Tensor::shape_str(a->value.shape));
  const std::size_t n = a->value.dim(0), d = a->value.dim(1);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = a->value.data.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) s += row[j];
    out[i] = s;
  }
  return detail::tape_of(a).make(std::move(out), {a}, [a, n, d](Node* self) {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = self->grad[i];
      double* row = a->grad.data.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += g;
    }
  });
}

/// Inner product of two equal-length vectors.
inline Var dot(Var a, Var b) {
  require_same_shape(a->value, b->value, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i] * b->value[i];
  return detail::tape_of(a).make(Tensor::scalar(s), {a, b}, [a, b](Node* self) {
    const double g = self->grad[0];
    if (a->needs_grad)
      for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g * b->value[i];
    if (b->needs_grad)
      for (std::size_t i = 0; i < b->grad.size(); ++i) b->grad[i] += g * a->value[i];
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var reshape(Var a, std::vector<std::size_t> new_shape) {
  if (Tensor::count(new_shape) != a->value.size())
    throw ShapeMismatch("reshape from " + Tensor::shape_str(a->value.shape) + " to " +
                        Tensor::shape_str(new_shape) + " changes element count");
  Tensor out(std::move(new_shape), a->value.data);
  return detail::tape_of(a).make(std::move(out), {a}, [a](Node* self) {
    detail::axpy(a->grad, self->grad);
  });
}

/// Concatenate along axis 0. All inputs must share trailing dimensions.
inline Var concat0(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat0 of zero tensors");
  std::vector<std::size_t> shape = parts[0]->value.shape;
  std::size_t rows = 0;
  for (Var p : parts) {
    if (p->value.rank() != shape.size())
      throw ShapeMismatch("concat0: rank mismatch");
    for (std::size_t i = 1; i < shape.size(); ++i)
      if (p->value.dim(i) != shape[i])
        throw ShapeMismatch("concat0: trailing dimension mismatch");
    rows += p->value.dim(0);
  }
  shape[0] = rows;
  Tensor out(shape);
  std::size_t off = 0;
  for (Var p : parts) {
    std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + off);
    off += p->value.size();
  }
  return detail::tape_of(parts[0]).make(std::move(out), parts, [parts](Node* self) {
    std::size_t off = 0;
    for (Var p : parts) {
      if (p->needs_grad)
        for (std::size_t i = 0; i < p->grad.size(); ++i)
          p->grad[i] += self->grad[off + i];
      off += p->grad.size();
    }
  });
}

/// Columns [c0, c1) of a rank-2 tensor.
inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  if (a->value.rank() != 2 || c1 > a->value.dim(1) || c0 >= c1)
    throw ShapeMismatch("slice_cols: bad range on " + Tensor::shape_str(a->value.shape));
  const std::size_t n = a->value.dim(0), d = a->value.dim(1), w = c1 - c0;
  Tensor out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(a->value.data.data() + i * d + c0, w, out.data.data() + i * w);
  return detail::tape_of(a).make(std::move(out), {a}, [a, n, d, c0, w](Node* self) {
    for (std::size_t i = 0; i < n; ++i) {
      double* dst = a->grad.data.data() + i * d + c0;
      const double* src = self->grad.data.data() + i * w;
      for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
}

/// Select rows of a rank-2 tensor by index; backward scatter-adds.
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
  if (a->value.rank() != 2)
    throw ShapeMismatch("gather_rows expects a rank-2 tensor");
  const std::size_t n = a->value.dim(0), d = a->value.dim(1);
  for (std::size_t r : idx)
    if (r >= n) throw ShapeMismatch("gather_rows: row index out of range");
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(a->value.data.data() + idx[i] * d, d, out.data.data() + i * d);
  return detail::tape_of(a).make(std::move(out), {a},
                                 [a, d, idx = std::move(idx)](Node* self) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = a->grad.data.data() + idx[i] * d;
      const double* src = self->grad.data.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

/// Repeat each row of an (N x D) tensor S times consecutively, producing
/// (N*S x D). Backward sums each group of S rows.
inline Var repeat_rows(Var a, std::size_t s) {
  if (a->value.rank() != 2)
    throw ShapeMismatch("repeat_rows expects a rank-2 tensor");
  const std::size_t n = a->value.dim(0), d = a->value.dim(1);
  Tensor out({n * s, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < s; ++k)
      std::copy_n(a->value.data.data() + i * d, d,
                  out.data.data() + (i * s + k) * d);
  return detail::tape_of(a).make(std::move(out), {a}, [a, n, d, s](Node* self) {
    for (std::size_t i = 0; i < n; ++i) {
      double* dst = a->grad.data.data() + i * d;
      for (std::size_t k = 0; k < s; ++k) {
        const double* src = self->grad.data.data() + (i * s + k) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Neural-net ops
// ---------------------------------------------------------------------------

/// Affine map: (N x D) @ (D x U) + bias(U).
inline Var dense(Var x, Var w, Var b) {
  if (x->value.rank() != 2 || w->value.rank() != 2 || b->value.rank() != 1 ||
      x->value.dim(1) != w->value.dim(0) || w->value.dim(1) != b->value.dim(0)) {
    throw ShapeMismatch("dense: incompatible shapes " +
                        Tensor::shape_str(x->value.shape) + " @ " +
                        Tensor::shape_str(w->value.shape) + " + " +
                        Tensor::shape_str(b->value.shape));
  }
  const std::size_t n = x->value.dim(0), d = x->value.dim(1), u = w->value.dim(1);
  Tensor out({n, u});
  {
    ECMap X(x->value.data.data(), n, d), W(w->value.data.data(), d, u);
    EMap O(out.data.data(), n, u);
    O.noalias() = X * W;
    for (std::size_t i = 0; i < n; ++i) {
      double* row = out.data.data() + i * u;
      for (std::size_t j = 0; j < u; ++j) row[j] += b->value[j];
    }
  }
  return detail::tape_of(x).make(std::move(out), {x, w, b},
                                 [x, w, b, n, d, u](Node* self) {
    ECMap G(self->grad.data.data(), n, u);
    if (w->needs_grad) {
      ECMap X(x->value.data.data(), n, d);
      EMap dW(w->grad.data.data(), d, u);
      dW.noalias() += X.transpose() * G;
    }
    if (x->needs_grad) {
      ECMap W(w->value.data.data(), d, u);
      EMap dX(x->grad.data.data(), n, d);
      dX.noalias() += G * W.transpose();
    }
    if (b->needs_grad) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* row = self->grad.data.data() + i * u;
        for (std::size_t j = 0; j < u; ++j) b->grad[j] += row[j];
      }
    }
  });
}

/// Add a per-channel bias to an NHWC tensor.
inline Var channel_bias(Var x, Var b) {
  if (x->value.rank() != 4 || b->value.rank() != 1 ||
      x->value.dim(3) != b->value.dim(0))
    throw ShapeMismatch("channel_bias: " + Tensor::shape_str(x->value.shape) +
                        " + " + Tensor::shape_str(b->value.shape));
  const std::size_t c = b->value.dim(0);
  const std::size_t cells = x->value.size() / c;
  Tensor out = x->value;
  for (std::size_t i = 0; i < cells; ++i) {
    double* px = out.data.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) px[j] += b->value[j];
  }
  return detail::tape_of(x).make(std::move(out), {x, b}, [x, b, cells, c](Node* self) {
    if (x->needs_grad) detail::axpy(x->grad, self->grad);
    if (b->needs_grad) {
      for (std::size_t i = 0; i < cells; ++i) {
        const double* g = self->grad.data.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) b->grad[j] += g[j];
      }
    }
  });
}

enum class Padding { same, valid };

namespace detail {

struct ConvGeom {
  std::size_t n, h, w, c;    // input
  std::size_t kh, kw, f;     // kernel
  std::size_t sh, sw;        // strides
  std::size_t ho, wo;        // output spatial
  std::ptrdiff_t pad_top, pad_left;
};

inline ConvGeom conv_geom(const Tensor& x, const Tensor& k, std::size_t sh,
                          std::size_t sw, Padding pad) {
  if (x.rank() != 4 || k.rank() != 4)
    throw ShapeMismatch("conv2d expects input NxHxWxC and kernel KHxKWxCxF");
  if (sh < 1 || sw < 1) throw ShapeMismatch("conv2d: strides must be >= 1");
  ConvGeom g;
  g.n = x.dim(0); g.h = x.dim(1); g.w = x.dim(2); g.c = x.dim(3);
  g.kh = k.dim(0); g.kw = k.dim(1); g.f = k.dim(3);
  if (k.dim(2) != g.c)
    throw ShapeMismatch("conv2d: kernel channels " + std::to_string(k.dim(2)) +
                        " != input channels " + std::to_string(g.c));
  g.sh = sh; g.sw = sw;
  if (pad == Padding::same) {
    g.ho = (g.h + sh - 1) / sh;
    g.wo = (g.w + sw - 1) / sw;
    // total padding split evenly, extra on bottom/right
    const std::ptrdiff_t ph =
        std::max<std::ptrdiff_t>(0, std::ptrdiff_t((g.ho - 1) * sh + g.kh) - std::ptrdiff_t(g.h));
    const std::ptrdiff_t pw =
        std::max<std::ptrdiff_t>(0, std::ptrdiff_t((g.wo - 1) * sw + g.kw) - std::ptrdiff_t(g.w));
    g.pad_top = ph / 2;
    g.pad_left = pw / 2;
  } else {
    if (g.h < g.kh || g.w < g.kw)
      throw ShapeMismatch("conv2d valid: kernel larger than input");
    g.ho = (g.h - g.kh) / sh + 1;
    g.wo = (g.w - g.kw) / sw + 1;
    g.pad_top = 0;
    g.pad_left = 0;
  }
  return g;
}

/// Lower input patches into a (N*HO*WO) x (KH*KW*C) matrix.
inline void im2col(const Tensor& x, const ConvGeom& g, double* col) {
  const std::size_t k_cols = g.kh * g.kw * g.c;
  const double* src = x.data.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        double* row = col + ((n * g.ho + oy) * g.wo + ox) * k_cols;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.sh) - g.pad_top + std::ptrdiff_t(ky);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.sw) - g.pad_left + std::ptrdiff_t(kx);
            double* cell = row + (ky * g.kw + kx) * g.c;
            if (iy < 0 || iy >= std::ptrdiff_t(g.h) || ix < 0 || ix >= std::ptrdiff_t(g.w)) {
              std::fill_n(cell, g.c, 0.0);
            } else {
              const double* px = src + ((n * g.h + iy) * g.w + ix) * g.c;
              std::copy_n(px, g.c, cell);
            }
          }
        }
      }
    }
  }
}

/// Scatter-add a column matrix back into input-gradient layout.
inline void col2im_add(const double* col, const ConvGeom& g, Tensor& dx) {
  const std::size_t k_cols = g.kh * g.kw * g.c;
  double* dst = dx.data.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t oy = 0; oy < g.ho; ++oy) {
      for (std::size_t ox = 0; ox < g.wo; ++ox) {
        const double* row = col + ((n * g.ho + oy) * g.wo + ox) * k_cols;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.sh) - g.pad_top + std::ptrdiff_t(ky);
          if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.sw) - g.pad_left + std::ptrdiff_t(kx);
            if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
            const double* cell = row + (ky * g.kw + kx) * g.c;
            double* px = dst + ((n * g.h + iy) * g.w + ix) * g.c;
            for (std::size_t c = 0; c < g.c; ++c) px[c] += cell[c];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation, NHWC input, KHxKWxCxF kernel. `same` padding
/// gives ceil(H/sh) x ceil(W/sw) output with zeros split evenly around the
/// input (extra on bottom/right). Lowered to a single GEMM via im2col; the
/// column matrix is kept for the backward pass.
inline Var conv2d(Var x, Var k, std::size_t sh, std::size_t sw, Padding pad) {
  const detail::ConvGeom g = detail::conv_geom(x->value, k->value, sh, sw, pad);
  const std::size_t m = g.n * g.ho * g.wo;
  const std::size_t kc = g.kh * g.kw * g.c;
  auto col = std::make_shared<std::vector<double>>(m * kc);
  detail::im2col(x->value, g, col->data());
  Tensor out({g.n, g.ho, g.wo, g.f});
  {
    ECMap C(col->data(), m, kc), K(k->value.data.data(), kc, g.f);
    EMap O(out.data.data(), m, g.f);
    O.noalias() = C * K;
  }
  return detail::tape_of(x).make(std::move(out), {x, k},
                                 [x, k, g, m, kc, col](Node* self) {
    ECMap G(self->grad.data.data(), m, g.f);
    if (k->needs_grad) {
      ECMap C(col->data(), m, kc);
      EMap dK(k->grad.data.data(), kc, g.f);
      dK.noalias() += C.transpose() * G;
    }
    if (x->needs_grad) {
      std::vector<double> dcol(m * kc);
      ECMap K(k->value.data.data(), kc, g.f);
      EMap dC(dcol.data(), m, kc);
      dC.noalias() = G * K.transpose();
      detail::col2im_add(dcol.data(), g, x->grad);
    }
  });
}

/// Reparameterized Gaussian sample: z = mu + exp(0.5*logvar) * eps, with
/// eps supplied by the caller so the draw is deterministic given a seed.
/// Gradients: dmu = dz, dlogvar = dz * 0.5 * exp(0.5*logvar) * eps.
inline Var reparam_sample(Var mu, Var logvar, const Tensor& eps) {
  require_same_shape(mu->value, logvar->value, "reparam_sample");
  require_same_shape(mu->value, eps, "reparam_sample(eps)");
  const std::size_t n = mu->value.size();
  auto sigma = std::make_shared<std::vector<double>>(n);
  Tensor out(mu->value.shape);
  for (std::size_t i = 0; i < n; ++i) {
    (*sigma)[i] = std::exp(0.5 * logvar->value[i]);
    out[i] = mu->value[i] + (*sigma)[i] * eps[i];
  }
  auto eps_copy = std::make_shared<Tensor>(eps);
  return detail::tape_of(mu).make(std::move(out), {mu, logvar},
                                  [mu, logvar, sigma, eps_copy, n](Node* self) {
    if (mu->needs_grad) detail::axpy(mu->grad, self->grad);
    if (logvar->needs_grad)
      for (std::size_t i = 0; i < n; ++i)
        logvar->grad[i] += self->grad[i] * 0.5 * (*sigma)[i] * (*eps_copy)[i];
  });
}

}  // namespace xmodal::ad

#endif  // XMODAL_AUTODIFF_HPP

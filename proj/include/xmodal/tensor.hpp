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

#ifndef XMODAL_TENSOR_HPP
#define XMODAL_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal {

/// Dense n-dimensional array of doubles, row-major.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shp)
      : shape(std::move(shp)), data(count(shape), 0.0) {}

  Tensor(std::vector<std::size_t> shp, std::vector<double> values)
      : shape(std::move(shp)), data(std::move(values)) {
    if (count(shape) != data.size()) {
      throw ShapeMismatch("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    }
  }

  static std::size_t count(const std::vector<std::size_t>& shp) {
    std::size_t n = 1;
    for (std::size_t d : shp) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> shp) { return Tensor(std::move(shp)); }

  static Tensor full(std::vector<std::size_t> shp, double v) {
    Tensor t(std::move(shp));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape[i]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  /// True when every entry is finite.
  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static std::string shape_str(const std::vector<std::size_t>& shp) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shp.size(); ++i) {
      if (i) os << "x";
      os << shp[i];
    }
    os << ")";
    return os.str();
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch(std::string(op) + ": shapes " + Tensor::shape_str(a.shape) +
                        " and " + Tensor::shape_str(b.shape) + " differ");
  }
}

}  // namespace xmodal

#endif  // XMODAL_TENSOR_HPP

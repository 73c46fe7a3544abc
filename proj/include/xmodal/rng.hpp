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

#ifndef XMODAL_RNG_HPP
#define XMODAL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string_view>

namespace xmodal {

/// Deterministic random stream (splitmix64 core, Box-Muller normals).
///
/// Training derives one independent stream per (name, epoch, step) from the
/// master seed, so resuming a run at any epoch consumes exactly the same
/// random sequence as an uninterrupted run.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  /// Stream keyed by master seed, purpose name, epoch and step.
  static RngStream keyed(std::uint64_t master, std::string_view name,
                         std::uint64_t epoch = 0, std::uint64_t step = 0) {
    std::uint64_t h = mix(master ^ 0x6a09e667f3bcc909ULL);
    h = mix(h ^ fnv1a(name));
    h = mix(h ^ (epoch * 0x9e3779b97f4a7c15ULL + 1));
    h = mix(h ^ (step * 0xc2b2ae3d27d4eb4fULL + 1));
    return RngStream(h);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  /// Uniform double in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  /// Uniform integer in [0, n). Rejection sampling, unbiased.
  std::uint64_t next_below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal draw (Box-Muller; second value of each pair is cached).
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0,1] so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xmodal

#endif  // XMODAL_RNG_HPP

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

#ifndef XMODAL_DSP_HPP
#define XMODAL_DSP_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal::dsp {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// Frame/filterbank geometry. FFT size is the smallest power of two that
/// holds one window; the mel band ends at Nyquist. The pipeline is fixed:
/// per-frame DC removal, Povey window, power spectrum, triangular filters
/// on the HTK mel scale, natural log with floor epsilon. No pre-emphasis,
/// no dithering.
struct FrontendConfig {
  double window_ms = 25.0;
  double shift_ms = 10.0;
  std::size_t n_mels = 80;
  std::size_t target_frames = 100;
  double mel_low_hz = 20.0;
  double log_floor = 1e-10;

  std::size_t window_samples(double sample_rate) const {
    return std::size_t(std::lround(sample_rate * window_ms / 1000.0));
  }
  std::size_t shift_samples(double sample_rate) const {
    return std::size_t(std::lround(sample_rate * shift_ms / 1000.0));
  }
  static std::size_t fft_size_for(std::size_t window) {
    std::size_t n = 1;
    while (n < window) n <<= 1;
    return n;
  }
};

/// Log mel energies, frames x n_mels.
struct Filterbank {
  Tensor values;
  std::size_t frame_count() const { return values.rank() ? values.dim(0) : 0; }
};

/// w[i] = (0.5 - 0.5*cos(2*pi*i/(n-1)))^0.85, the Kaldi analysis window.
inline std::vector<double> povey_window(std::size_t n) {
  if (n < 2) throw BadLength("povey_window needs n >= 2, got " + std::to_string(n));
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * kPi * double(i) / double(n - 1));
    w[i] = std::pow(hann, 0.85);
  }
  return w;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters linear on the mel scale, rows n_mels, cols
/// fft_size/2 + 1 power-spectrum bins.
inline std::vector<std::vector<double>> mel_filter_matrix(std::size_t n_mels,
                                                          std::size_t fft_size,
                                                          double sample_rate,
                                                          double low_hz,
                                                          double high_hz) {
  const std::size_t bins = fft_size / 2 + 1;
  const double mel_low = hz_to_mel(low_hz);
  const double mel_high = hz_to_mel(high_hz);
  const double delta = (mel_high - mel_low) / double(n_mels + 1);
  std::vector<std::vector<double>> filters(n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = mel_low + double(m) * delta;
    const double center = left + delta;
    const double right = center + delta;
    for (std::size_t b = 0; b < bins; ++b) {
      const double mel = hz_to_mel(double(b) * sample_rate / double(fft_size));
      if (mel > left && mel < right) {
        filters[m][b] = mel <= center ? (mel - left) / (center - left)
                                      : (right - mel) / (right - center);
      }
    }
  }
  return filters;
}

namespace detail {

/// In-place iterative radix-2 FFT over interleaved (re, im) pairs.
/// n must be a power of two.
inline void fft_radix2(std::vector<double>& buf, std::size_t n) {
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(buf[2 * i], buf[2 * j]);
      std::swap(buf[2 * i + 1], buf[2 * j + 1]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / double(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cur_r = 1.0, cur_i = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = 2 * (i + k), b = 2 * (i + k + len / 2);
        const double ur = buf[a], ui = buf[a + 1];
        const double vr = buf[b] * cur_r - buf[b + 1] * cur_i;
        const double vi = buf[b] * cur_i + buf[b + 1] * cur_r;
        buf[a] = ur + vr;
        buf[a + 1] = ui + vi;
        buf[b] = ur - vr;
        buf[b + 1] = ui - vi;
        const double nr = cur_r * wr - cur_i * wi;
        cur_i = cur_r * wi + cur_i * wr;
        cur_r = nr;
      }
    }
  }
}

}  // namespace detail

/// Frame the signal (window_ms at shift_ms hop), remove per-frame DC,
/// apply the Povey window, take the power spectrum and mel-filter it,
/// then log(energy + epsilon).
inline Filterbank log_mel_spectrogram(std::span<const double> samples,
                                      double sample_rate,
                                      const FrontendConfig& cfg = {}) {
  const std::size_t win = cfg.window_samples(sample_rate);
  const std::size_t hop = cfg.shift_samples(sample_rate);
  if (win < 2 || hop < 1)
    throw BadLength("frontend: degenerate window/hop for rate " +
                    std::to_string(sample_rate));
  if (samples.size() < win)
    throw TooShort("frontend: " + std::to_string(samples.size()) +
                   " samples, need at least " + std::to_string(win));
  const std::size_t frames = (samples.size() - win) / hop + 1;
  const std::size_t fft_size = FrontendConfig::fft_size_for(win);
  const std::size_t bins = fft_size / 2 + 1;

  const std::vector<double> window = povey_window(win);
  const auto filters = mel_filter_matrix(cfg.n_mels, fft_size, sample_rate,
                                         cfg.mel_low_hz, sample_rate / 2.0);

  Filterbank fb;
  fb.values = Tensor({frames, cfg.n_mels});
  std::vector<double> buf(2 * fft_size);
  std::vector<double> power(bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* frame = samples.data() + t * hop;
    double mean = 0.0;
    for (std::size_t i = 0; i < win; ++i) mean += frame[i];
    mean /= double(win);
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t i = 0; i < win; ++i) buf[2 * i] = (frame[i] - mean) * window[i];
    detail::fft_radix2(buf, fft_size);
    for (std::size_t b = 0; b < bins; ++b)
      power[b] = buf[2 * b] * buf[2 * b] + buf[2 * b + 1] * buf[2 * b + 1];
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      const auto& row = filters[m];
      for (std::size_t b = 0; b < bins; ++b) e += row[b] * power[b];
      fb.values[t * cfg.n_mels + m] = std::log(e + cfg.log_floor);
    }
  }
  return fb;
}

/// Fit to exactly target_frames rows and standardize. Longer inputs are
/// center cropped (odd surplus drops the trailing frame). Shorter inputs
/// have their mean removed, then zero rows appended. The result is scaled
/// to zero mean and unit variance over all cells (variance denominator N);
/// an all-constant input (variance < 1e-12) yields the zero matrix.
inline Tensor fit_and_normalize(const Filterbank& fbank, std::size_t target_frames) {
  const std::size_t frames = fbank.frame_count();
  if (frames < 1) throw TooShort("fit_and_normalize: empty filterbank");
  const std::size_t n_mels = fbank.values.dim(1);
  Tensor out({target_frames, n_mels});

  if (frames > target_frames) {
    const std::size_t lead = (frames - target_frames) / 2;
    std::copy_n(fbank.values.data.data() + lead * n_mels, target_frames * n_mels,
                out.data.data());
  } else {
    double mean = 0.0;
    for (double v : fbank.values.data) mean += v;
    mean /= double(fbank.values.size());
    for (std::size_t i = 0; i < fbank.values.size(); ++i)
      out[i] = fbank.values[i] - mean;
    // rows frames..target_frames-1 stay zero
  }

  double mean = 0.0;
  for (double v : out.data) mean += v;
  mean /= double(out.size());
  double var = 0.0;
  for (double v : out.data) var += (v - mean) * (v - mean);
  var /= double(out.size());
  if (var < 1e-12) return Tensor::zeros({target_frames, n_mels});
  const double inv_std = 1.0 / std::sqrt(var);
  for (double& v : out.data) v = (v - mean) * inv_std;
  return out;
}

/// Full frontend: spectrogram, crop/pad, standardize.
inline Tensor frontend_features(std::span<const double> samples, double sample_rate,
                                const FrontendConfig& cfg = {}) {
  return fit_and_normalize(log_mel_spectrogram(samples, sample_rate, cfg),
                           cfg.target_frames);
}

}  // namespace xmodal::dsp

#endif  // XMODAL_DSP_HPP

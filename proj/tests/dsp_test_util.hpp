// Copyright 2026  The wavssl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Test-only DSP oracles: a radix-2 FFT and a dominant-frequency estimator,
// independent of the library's signal path.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

namespace wavssl_test {

inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

struct FftPeak {
  double frequency = 0.0;      // parabolic-interpolated
  double bin_frequency = 0.0;  // raw argmax bin center
  double bin_width = 0.0;
};

/// Hann-windowed, zero-padded FFT peak of a real signal.
inline FftPeak dominant_frequency(const std::vector<double>& x, double sample_rate) {
  std::size_t n = 1;
  while (n < x.size()) n <<= 1;
  n = std::max<std::size_t>(n * 2, 4096);  // zero-pad for resolution
  std::vector<std::complex<double>> a(n, {0.0, 0.0});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / static_cast<double>(x.size()));
    a[i] = x[i] * w;
  }
  fft_inplace(a);
  const std::size_t half = n / 2;
  std::size_t best = 1;
  for (std::size_t k = 1; k < half; ++k) {
    if (std::abs(a[k]) > std::abs(a[best])) best = k;
  }
  FftPeak peak;
  peak.bin_width = sample_rate / static_cast<double>(n);
  peak.bin_frequency = static_cast<double>(best) * peak.bin_width;
  double delta = 0.0;
  if (best > 0 && best + 1 < half) {
    const double alpha = std::log(std::abs(a[best - 1]) + 1e-30);
    const double beta = std::log(std::abs(a[best]) + 1e-30);
    const double gamma = std::log(std::abs(a[best + 1]) + 1e-30);
    const double denom = alpha - 2.0 * beta + gamma;
    if (std::abs(denom) > 1e-12) delta = 0.5 * (alpha - gamma) / denom;
  }
  peak.frequency = (static_cast<double>(best) + delta) * peak.bin_width;
  return peak;
}

inline std::vector<double> make_sine(double freq, double sample_rate, std::size_t n,
                                     double amplitude = 0.5, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = amplitude * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / sample_rate + phase);
  }
  return x;
}

}  // namespace wavssl_test

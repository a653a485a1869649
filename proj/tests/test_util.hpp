#pragma once

// Shared helpers for the test suites. Oracles here are deliberately naive and
// never call into the code under test.

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "apnet/dsp.hpp"

namespace testutil {

inline constexpr double kPi = 3.14159265358979323846;

inline std::vector<double> random_signal(std::size_t n, std::uint64_t seed, double amp = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-amp, amp);
  std::vector<double> x(n);
  for (double& v : x) v = dist(rng);
  return x;
}

inline std::vector<double> tone(std::size_t n, double hz, int sample_rate, double amp = 0.5, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) x[t] = amp * std::cos(2.0 * kPi * hz * static_cast<double>(t) / sample_rate + phase);
  return x;
}

inline apnet::dsp::Waveform wave(std::vector<double> samples, int sample_rate = 16000) {
  apnet::dsp::Waveform w;
  w.samples = std::move(samples);
  w.sample_rate = sample_rate;
  return w;
}

/// 10 log10(sum x^2 / sum (x - y)^2).
inline double snr_db(const std::vector<double>& x, const std::vector<double>& y) {
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sig += x[i] * x[i];
    err += (x[i] - y[i]) * (x[i] - y[i]);
  }
  return 10.0 * std::log10(sig / err);
}

/// Brute-force framed DFT: frame f starts at f*shift - (L - shift)/2, O(N^2) per frame.
inline std::vector<std::vector<std::complex<double>>> brute_stft(const std::vector<double>& x, int L, int shift, int N,
                                                                 bool hann) {
  const std::size_t frames = (x.size() + static_cast<std::size_t>(shift) - 1) / static_cast<std::size_t>(shift);
  const long offset = (L - shift) / 2;
  std::vector<std::vector<std::complex<double>>> out(frames, std::vector<std::complex<double>>(static_cast<std::size_t>(N / 2 + 1)));
  for (std::size_t f = 0; f < frames; ++f) {
    for (int k = 0; k <= N / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (int n = 0; n < L; ++n) {
        const long t = static_cast<long>(f) * shift - offset + n;
        if (t < 0 || t >= static_cast<long>(x.size())) continue;
        const double w = hann ? 0.5 - 0.5 * std::cos(2.0 * kPi * n / L) : 1.0;
        acc += w * x[static_cast<std::size_t>(t)] * std::polar(1.0, -2.0 * kPi * k * n / N);
      }
      out[f][static_cast<std::size_t>(k)] = acc;
    }
  }
  return out;
}

/// Quadrant-by-quadrant angle of (re, im) in (-pi, pi].
inline double quadrant_phase(double re, double im) {
  if (re == 0.0 && im == 0.0) return 0.0;
  if (re == 0.0) return im > 0.0 ? kPi / 2 : -kPi / 2;
  if (im == 0.0) return re > 0.0 ? 0.0 : kPi;
  const double ref = std::atan(std::abs(im) / std::abs(re));  // acute angle to the real axis
  if (re > 0.0 && im > 0.0) return ref;
  if (re < 0.0 && im > 0.0) return kPi - ref;
  if (re < 0.0 && im < 0.0) return -kPi + ref;
  return -ref;
}

inline double wrap(double p) {
  double r = std::remainder(p, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

}  // namespace testutil

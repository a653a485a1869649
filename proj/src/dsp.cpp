#include "apnet/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <string>

#include "apnet/error.hpp"
#include "apnet/fft.hpp"

namespace apnet::dsp {

void StftConfig::validate() const {
  require(sample_rate > 0, ErrorKind::Config, "stft: sample_rate must be positive");
  require(frame_shift > 0 && frame_shift <= frame_length && frame_length <= fft_size, ErrorKind::Config,
          "stft: need 0 < frame_shift <= frame_length <= fft_size");
  require(fft_size >= 2 && fft_size % 2 == 0, ErrorKind::Config, "stft: fft_size must be even");

  // Constant overlap-add: sum_k w[n + k*shift] must not depend on n.
  const auto w = make_window(window, frame_length);
  double lo = INFINITY, hi = -INFINITY;
  for (int n = 0; n < frame_shift; ++n) {
    double acc = 0.0;
    for (int m = n; m < frame_length; m += frame_shift) acc += w[static_cast<std::size_t>(m)];
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
  }
  require(hi > 0.0 && (hi - lo) <= 1e-10 * hi, ErrorKind::Config,
          "stft: window is not constant-overlap-add at frame_shift " + std::to_string(frame_shift));
}

void MelConfig::validate(int sample_rate) const {
  require(num_mels >= 1, ErrorKind::Config, "mel: num_mels must be >= 1");
  require(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0, ErrorKind::Config,
          "mel: need 0 <= f_min < f_max <= sample_rate/2");
  require(log_floor > 0.0, ErrorKind::Config, "mel: log_floor must be positive");
}

bool Waveform::all_finite() const {
  return std::all_of(samples.begin(), samples.end(), [](double v) { return std::isfinite(v); });
}

double phase_formula(double re, double im) {
  if (re == 0.0) {
    if (im > 0.0) return kPi / 2;
    if (im < 0.0) return -kPi / 2;
    return 0.0;
  }
  double p = std::atan(im / re) - kPi / 2 * sgn_star(im) * (sgn_star(re) - 1.0);
  // atan of an underflowed ratio can land exactly on -pi; the true angle is just above it.
  if (p <= -kPi) p = std::nextafter(-kPi, 0.0);
  return p;
}

std::vector<double> make_window(WindowKind kind, int length) {
  std::vector<double> w(static_cast<std::size_t>(length), 1.0);
  if (kind == WindowKind::Hann) {
    for (int n = 0; n < length; ++n) w[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * kPi * n / length);
  }
  return w;
}

ComplexSpectrum stft(const Waveform& x, const StftConfig& cfg) {
  require(x.sample_rate == cfg.sample_rate, ErrorKind::InvalidInput,
          "stft: waveform sample rate " + std::to_string(x.sample_rate) + " != config " +
              std::to_string(cfg.sample_rate));
  return stft(std::span<const double>(x.samples), cfg);
}

ComplexSpectrum stft(std::span<const double> x, const StftConfig& cfg) {
  require(!x.empty(), ErrorKind::InvalidInput, "stft: empty waveform");
  const auto w = make_window(cfg.window, cfg.frame_length);
  const std::size_t frames = cfg.num_frames(x.size());
  const std::size_t bins = static_cast<std::size_t>(cfg.num_bins());
  const long len = static_cast<long>(x.size());

  ComplexSpectrum out(frames, bins);
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
  std::vector<std::complex<double>> spec(bins);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    const long start = static_cast<long>(f) * cfg.frame_shift - cfg.frame_offset();
    for (int n = 0; n < cfg.frame_length; ++n) {
      const long t = start + n;
      if (t >= 0 && t < len) buf[static_cast<std::size_t>(n)] = w[static_cast<std::size_t>(n)] * x[static_cast<std::size_t>(t)];
    }
    rfft(buf, spec);
    for (std::size_t k = 0; k < bins; ++k) {
      out.real(f, k) = spec[k].real();
      out.imag(f, k) = spec[k].imag();
    }
  }
  return out;
}

std::vector<double> window_energy(const StftConfig& cfg, std::size_t frames, std::size_t out_len) {
  const auto w = make_window(cfg.window, cfg.frame_length);
  std::vector<double> energy(out_len, 0.0);
  for (std::size_t f = 0; f < frames; ++f) {
    const long start = static_cast<long>(f) * cfg.frame_shift - cfg.frame_offset();
    for (int n = 0; n < cfg.frame_length; ++n) {
      const long t = start + n;
      if (t >= 0 && t < static_cast<long>(out_len)) {
        const double v = w[static_cast<std::size_t>(n)];
        energy[static_cast<std::size_t>(t)] += v * v;
      }
    }
  }
  return energy;
}

Waveform istft(const ComplexSpectrum& s, const StftConfig& cfg, std::size_t out_len) {
  const std::size_t bins = static_cast<std::size_t>(cfg.num_bins());
  require(s.real.same_shape(s.imag), ErrorKind::InvalidInput, "istft: real/imag shape mismatch");
  require(s.bins() == bins, ErrorKind::InvalidInput,
          "istft: spectrum has " + std::to_string(s.bins()) + " bins, config expects " + std::to_string(bins));
  const std::size_t frames = s.frames();
  require(out_len <= frames * static_cast<std::size_t>(cfg.frame_shift), ErrorKind::InvalidInput,
          "istft: out_len exceeds frames * frame_shift");

  const auto w = make_window(cfg.window, cfg.frame_length);
  const double inv_n = 1.0 / cfg.fft_size;
  Waveform out;
  out.sample_rate = cfg.sample_rate;
  out.samples.assign(out_len, 0.0);
  std::vector<std::complex<double>> spec(bins);
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_size));
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < bins; ++k) spec[k] = {s.real(f, k), s.imag(f, k)};
    irfft_unnormalized(spec, buf);
    const long start = static_cast<long>(f) * cfg.frame_shift - cfg.frame_offset();
    for (int n = 0; n < cfg.frame_length; ++n) {
      const long t = start + n;
      if (t >= 0 && t < static_cast<long>(out_len))
        out.samples[static_cast<std::size_t>(t)] += w[static_cast<std::size_t>(n)] * buf[static_cast<std::size_t>(n)] * inv_n;
    }
  }
  const auto energy = window_energy(cfg, frames, out_len);
  for (std::size_t t = 0; t < out_len; ++t) out.samples[t] = energy[t] > 1e-10 ? out.samples[t] / energy[t] : 0.0;
  return out;
}

Matrix log_amplitude(const ComplexSpectrum& s, double floor) {
  require(floor > 0.0, ErrorKind::InvalidInput, "log_amplitude: floor must be positive");
  Matrix out(s.frames(), s.bins());
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double re = s.real.data[i], im = s.imag.data[i];
    out.data[i] = std::log(std::max(std::sqrt(re * re + im * im), floor));
  }
  return out;
}

Matrix phase_spectrum(const ComplexSpectrum& s) {
  Matrix out(s.frames(), s.bins());
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = phase_formula(s.real.data[i], s.imag.data[i]);
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {
std::vector<double> mel_edges(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> hz(static_cast<std::size_t>(cfg.num_mels) + 2);
  for (std::size_t i = 0; i < hz.size(); ++i)
    hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.num_mels + 1));
  hz.front() = cfg.f_min;
  hz.back() = cfg.f_max;
  return hz;
}
}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
  const auto edges = mel_edges(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

Matrix mel_filterbank(const MelConfig& cfg, const StftConfig& stft_cfg) {
  cfg.validate(stft_cfg.sample_rate);
  const auto edges = mel_edges(cfg);
  const std::size_t bins = static_cast<std::size_t>(stft_cfg.num_bins());
  const double bin_hz = static_cast<double>(stft_cfg.sample_rate) / stft_cfg.fft_size;
  Matrix fb(static_cast<std::size_t>(cfg.num_mels), bins);
  for (std::size_t m = 0; m < fb.rows; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    double peak = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double v = 0.0;
      if (f > lo && f <= mid) v = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) v = (hi - f) / (hi - mid);
      fb(m, k) = v;
      peak = std::max(peak, v);
    }
    require(peak > 0.0, ErrorKind::Config,
            "mel: filter " + std::to_string(m) + " covers no FFT bin; num_mels too large for fft_size");
    for (double& v : fb.row(m)) v /= peak;
  }
  return fb;
}

Matrix mel_spectrogram(const ComplexSpectrum& s, const Matrix& filterbank, double log_floor) {
  require(filterbank.cols == s.bins(), ErrorKind::InvalidInput, "mel_spectrogram: filterbank/bin mismatch");
  Matrix out(s.frames(), filterbank.rows);
  std::vector<double> mag(s.bins());
  for (std::size_t f = 0; f < s.frames(); ++f) {
    for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(s.real(f, k), s.imag(f, k));
    for (std::size_t m = 0; m < filterbank.rows; ++m) {
      double acc = 0.0;
      const auto row = filterbank.row(m);
      for (std::size_t k = 0; k < mag.size(); ++k) acc += row[k] * mag[k];
      out(f, m) = std::log(std::max(acc, log_floor));
    }
  }
  return out;
}

Matrix mel_spectrogram(const Waveform& x, const StftConfig& cfg, const MelConfig& mcfg) {
  return mel_spectrogram(stft(x, cfg), mel_filterbank(mcfg, cfg), mcfg.log_floor);
}

}  // namespace apnet::dsp

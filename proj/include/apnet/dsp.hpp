#pragma once

// Differentiation-free signal processing: framing, STFT/ISTFT, amplitude and
// phase extraction, and mel analysis. All functions are pure.

#include <cstddef>
#include <span>
#include <vector>

namespace apnet::dsp {

inline constexpr double kPi = 3.14159265358979323846;

enum class WindowKind { Hann, Rectangular };

/// Row-major real matrix. Spectra are laid out (frames, bins).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

struct StftConfig {
  int sample_rate = 16000;
  int frame_length = 320;
  int frame_shift = 80;
  int fft_size = 1024;
  WindowKind window = WindowKind::Hann;

  int num_bins() const { return fft_size / 2 + 1; }
  /// Samples between the start of frame f and f * frame_shift.
  int frame_offset() const { return (frame_length - frame_shift) / 2; }
  std::size_t num_frames(std::size_t num_samples) const {
    return (num_samples + static_cast<std::size_t>(frame_shift) - 1) / static_cast<std::size_t>(frame_shift);
  }
  /// Throws Config on ordering violations or when the window is not COLA for the shift.
  void validate() const;

  bool operator==(const StftConfig&) const = default;
};

struct MelConfig {
  int num_mels = 80;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = 1e-5;

  void validate(int sample_rate) const;
  bool operator==(const MelConfig&) const = default;
};

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  bool all_finite() const;
};

struct ComplexSpectrum {
  Matrix real;
  Matrix imag;

  ComplexSpectrum() = default;
  ComplexSpectrum(std::size_t frames, std::size_t bins) : real(frames, bins), imag(frames, bins) {}
  std::size_t frames() const { return real.rows; }
  std::size_t bins() const { return real.cols; }
};

/// Sgn*: 1 for x >= 0, -1 otherwise.
inline double sgn_star(double x) { return x >= 0.0 ? 1.0 : -1.0; }

/// Phase of the vector (R, I) restricted to (-pi, pi], built from arctan and Sgn*.
double phase_formula(double re, double im);

std::vector<double> make_window(WindowKind kind, int length);

ComplexSpectrum stft(const Waveform& x, const StftConfig& cfg);
/// Same framing, taking raw samples (no sample-rate check).
ComplexSpectrum stft(std::span<const double> x, const StftConfig& cfg);

/// Weighted overlap-add synthesis, normalised per sample by the summed squared window.
Waveform istft(const ComplexSpectrum& s, const StftConfig& cfg, std::size_t out_len);

/// Per-sample sum of squared windows over `frames` frames, for samples [0, out_len).
std::vector<double> window_energy(const StftConfig& cfg, std::size_t frames, std::size_t out_len);

Matrix log_amplitude(const ComplexSpectrum& s, double floor = 1e-5);
Matrix phase_spectrum(const ComplexSpectrum& s);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// num_mels x num_bins, unit-peak triangles uniform on the HTK mel scale.
Matrix mel_filterbank(const MelConfig& cfg, const StftConfig& stft_cfg);
/// Centre frequency (Hz) of each mel filter.
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

/// frames x num_mels natural-log mel energies: log(max(fb * |S|, log_floor)).
Matrix mel_spectrogram(const Waveform& x, const StftConfig& cfg, const MelConfig& mcfg);
Matrix mel_spectrogram(const ComplexSpectrum& s, const Matrix& filterbank, double log_floor);

}  // namespace apnet::dsp

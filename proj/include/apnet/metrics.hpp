#pragma once

// Objective evaluation: SNR, log-amplitude RMSE, mel-cepstral distortion,
// STFT consistency gap and real-time factor.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apnet/dsp.hpp"
#include "apnet/model.hpp"

namespace apnet::metrics {

inline constexpr double kSnrCapDb = 120.0;
inline constexpr int kMcdOrder = 13;

/// 10 log10(sum x^2 / sum (x - x_hat)^2), capped at kSnrCapDb. Not symmetric.
double snr(std::span<const double> ref, std::span<const double> test);

/// RMSE over all frames and bins of the log-amplitude gap, in dB.
double las_rmse(std::span<const double> ref, std::span<const double> test, const dsp::StftConfig& cfg,
                double floor = 1e-5);

/// Orthonormal DCT-II of each log-mel row, keeping coefficients 0..order-1.
dsp::Matrix mel_cepstrum(const dsp::Matrix& log_mel, int order);

/// (10 sqrt2 / ln10) times the mean per-frame Euclidean gap of c1..c(order-1).
double mcd(std::span<const double> ref, std::span<const double> test, const dsp::StftConfig& cfg,
           const dsp::MelConfig& mel, int order = kMcdOrder);

/// Consistency loss of a spectrum, evaluated in double precision without gradients.
double consistency_gap(const dsp::ComplexSpectrum& s, const dsp::StftConfig& cfg);

struct EvalReport {
  std::string clip_id;
  double snr_db = 0;
  double las_rmse_db = 0;
  double mcd_db = 0;
  std::optional<double> consistency_gap;  // absent when no predicted spectrum exists
  std::optional<double> rtf;              // absent when nothing was timed
};

/// Metrics of `test` against `ref`; the waveforms must have equal length.
EvalReport evaluate(const std::string& clip_id, std::span<const double> ref, std::span<const double> test,
                    const dsp::StftConfig& cfg, const dsp::MelConfig& mel);

/// Column-wise mean with clip_id "mean"; optional columns average over the rows that carry them.
EvalReport mean_report(const std::vector<EvalReport>& rows);

std::string csv_header();
std::string csv_row(const EvalReport& r);
std::string json_line(const EvalReport& r);

struct RtfResult {
  int threads = 1;
  std::size_t utterances = 0;
  double audio_seconds = 0;
  double wall_seconds = 0;
  double rtf = 0;
};

/// Synthesizes every mel matrix on `threads` workers and divides wall-clock by audio duration.
RtfResult measure_rtf(const std::vector<dsp::Matrix>& mels, const nn::ModelWeights<float>& weights,
                      const nn::ApnetConfig& cfg, int threads);

}  // namespace apnet::metrics

#pragma once

// Training objective built on the autodiff graph. Every spectrum-shaped
// argument is (frames, bins); waveforms are rank-1.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "apnet/autodiff.hpp"
#include "apnet/dsp.hpp"

namespace apnet::loss {

struct LossWeights {
  double lambda_a = 45.0;
  double lambda_p = 100.0;
  double lambda_s = 20.0;
  double lambda_ri = 2.25;
  double lambda_mel = 45.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossReport {
  double l_a = 0, l_ip = 0, l_gd = 0, l_ptd = 0, l_p = 0;
  double l_c = 0, l_r = 0, l_i = 0, l_s = 0, l_mel = 0, l_g_total = 0;

  /// Name/value pairs in serialisation order ("L_A", "L_IP", ...).
  std::vector<std::pair<std::string, double>> fields() const;
  /// One-line JSON object of fields().
  std::string to_json_line() const;
};

template <typename T>
ad::Var amplitude_loss(ad::Graph<T>& g, ad::Var log_amp_hat, ad::Var log_amp);
template <typename T>
ad::Var instantaneous_phase_loss(ad::Graph<T>& g, ad::Var phase_hat, ad::Var phase);

/// num_bins x (num_bins - 1); row-vector times W gives adjacent-bin differences p[n] - p[n+1].
dsp::Matrix group_delay_matrix(std::size_t num_bins);

template <typename T>
ad::Var group_delay_loss(ad::Graph<T>& g, ad::Var phase_hat, ad::Var phase);
template <typename T>
ad::Var phase_time_diff_loss(ad::Graph<T>& g, ad::Var phase_hat, ad::Var phase);
template <typename T>
ad::Var phase_loss_total(ad::Graph<T>& g, ad::Var phase_hat, ad::Var phase);

/// mean((Re gap)^2 + (Im gap)^2) between S and stft(istft(S)) at F * frame_shift samples.
template <typename T>
ad::Var consistency_loss(ad::Graph<T>& g, ad::Var re, ad::Var im, const dsp::StftConfig& cfg);

/// (mean |Re gap|, mean |Im gap|).
template <typename T>
std::pair<ad::Var, ad::Var> real_imag_losses(ad::Graph<T>& g, ad::Var re_hat, ad::Var im_hat, ad::Var re,
                                             ad::Var im);

/// Feature settings shared by the mel term and target extraction.
struct LossSetup {
  dsp::StftConfig stft;
  dsp::MelConfig mel;
  dsp::Matrix filterbank;  // num_mels x bins

  static LossSetup make(const dsp::StftConfig& stft, const dsp::MelConfig& mel);
};

/// Waveform (T) -> log mel (frames, num_mels), traced through the graph.
template <typename T>
ad::Var mel_graph(ad::Graph<T>& g, ad::Var wave, const LossSetup& setup);

/// Mean L1 distance between the log mel spectrograms of two equal-length waveforms.
template <typename T>
ad::Var mel_loss(ad::Graph<T>& g, ad::Var wave_hat, ad::Var wave, const LossSetup& setup);

/// Constants of the optimisation for one clip or segment.
struct NaturalTargets {
  std::vector<double> wave;
  dsp::Matrix log_amp;
  dsp::Matrix phase;
  dsp::Matrix real;
  dsp::Matrix imag;
  dsp::Matrix mel;  // model input, frames x num_mels

  std::size_t frames() const { return log_amp.rows; }
};

NaturalTargets natural_targets(std::span<const double> wave, const LossSetup& setup);

template <typename T>
struct GeneratorLoss {
  ad::Var total;
  ad::Var l_a, l_ip, l_gd, l_ptd, l_p, l_c, l_r, l_i, l_s, l_mel;
  ad::Var wave_hat;  // F * frame_shift samples

  LossReport report(const ad::Graph<T>& g) const;
};

/// L_G = lambda_A L_A + lambda_P L_P + lambda_S (L_C + lambda_RI (L_R + L_I)) + lambda_Mel L_Mel.
template <typename T>
GeneratorLoss<T> generator_loss(ad::Graph<T>& g, ad::Var log_amp_hat, ad::Var phase_hat,
                                const NaturalTargets& target, const LossSetup& setup, const LossWeights& w);

}  // namespace apnet::loss

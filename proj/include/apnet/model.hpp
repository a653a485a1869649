#pragma once

// The generator: amplitude and phase spectrum predictors built from parallel
// residual convolution networks, spectrum reconstruction, and frame-level
// synthesis. Internal tensors are laid out (channels, frames); spectra leave
// the networks transposed to (frames, bins).

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "apnet/autodiff.hpp"
#include "apnet/dsp.hpp"

namespace apnet::nn {

struct ResNetConfig {
  int channels = 32;
  std::vector<int> kernel_sizes = {3, 7, 11};
  std::vector<std::vector<int>> dilations = {{1, 3, 5}, {1, 3, 5}, {1, 3, 5}};
  double lrelu_slope = 0.1;

  int num_blocks() const { return static_cast<int>(kernel_sizes.size()); }
  int subblocks() const { return dilations.empty() ? 0 : static_cast<int>(dilations.front().size()); }
  void validate() const;
  bool operator==(const ResNetConfig&) const = default;
};

struct ApnetConfig {
  int mel_dim = 80;
  int spec_bins = 513;
  int input_kernel = 7;
  int output_kernel = 7;
  ResNetConfig asp;
  ResNetConfig psp;
  dsp::StftConfig stft;
  dsp::MelConfig mel;

  void validate() const;
  bool operator==(const ApnetConfig&) const = default;
};

/// Every trainable tensor by name; std::map keeps iteration (and hence init) order stable.
template <typename T>
struct ModelWeights {
  std::map<std::string, ad::DiffTensor<T>> tensors;

  ad::DiffTensor<T>& at(const std::string& name);
  const ad::DiffTensor<T>& at(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();
};

/// Expected name -> shape table for a configuration.
std::map<std::string, ad::Shape> weight_shapes(const ApnetConfig& cfg);

/// Convolution weights ~ N(0, stddev), biases zero; deterministic in `seed`.
ModelWeights<float> init_weights(const ApnetConfig& cfg, std::uint64_t seed, double stddev = 0.01);

template <typename To, typename From>
ModelWeights<To> convert_weights(const ModelWeights<From>& w) {
  ModelWeights<To> out;
  for (const auto& [name, t] : w.tensors)
    out.tensors.emplace(name, ad::DiffTensor<To>(t.shape, std::vector<To>(t.values.begin(), t.values.end())));
  return out;
}

/// Name -> graph variable for one forward pass.
using Bound = std::map<std::string, ad::Var>;

/// Binds every tensor as a trainable leaf.
template <typename T>
Bound bind_parameters(ad::Graph<T>& g, ModelWeights<T>& w);
/// Binds every tensor as a constant (read-only weights, e.g. shared across inference threads).
template <typename T>
Bound bind_constants(ad::Graph<T>& g, const ModelWeights<T>& w);

/// LReLU -> dilated conv(k, d) -> LReLU -> conv(k) -> + x.
template <typename T>
ad::Var subresblock_forward(ad::Graph<T>& g, ad::Var x, const Bound& w, const std::string& prefix, int kernel,
                            int dilation, double slope);

/// Mean of P parallel blocks of Q chained subblocks, then LReLU.
template <typename T>
ad::Var resnet_forward(ad::Graph<T>& g, ad::Var x, const ResNetConfig& cfg, const Bound& w, const std::string& prefix);

/// mel (mel_dim, F) -> log amplitude (spec_bins, F).
template <typename T>
ad::Var asp_forward(ad::Graph<T>& g, ad::Var mel, const Bound& w, const ApnetConfig& cfg);

struct PhaseHeads {
  ad::Var real;   // R~ (spec_bins, F)
  ad::Var imag;   // I~ (spec_bins, F)
  ad::Var phase;  // Phi(R~, I~)
};

template <typename T>
PhaseHeads psp_forward(ad::Graph<T>& g, ad::Var mel, const Bound& w, const ApnetConfig& cfg);

struct Spectrum {
  ad::Var real;
  ad::Var imag;
};

/// real = exp(logA) cos P, imag = exp(logA) sin P.
template <typename T>
Spectrum reconstruct_spectrum(ad::Graph<T>& g, ad::Var log_amp, ad::Var phase);

/// Both predictors, outputs in (frames, bins) layout.
struct Prediction {
  ad::Var log_amp;
  ad::Var real_head;
  ad::Var imag_head;
  ad::Var phase;
};

template <typename T>
Prediction forward(ad::Graph<T>& g, ad::Var mel, const Bound& w, const ApnetConfig& cfg);

/// Adds a (frames, mel_dim) mel matrix to the graph as a (mel_dim, frames) constant.
template <typename T>
ad::Var mel_input(ad::Graph<T>& g, const dsp::Matrix& mel);

struct FrameLevelReport {
  bool ok = false;
  std::size_t frames = 0;
  std::size_t max_time_extent = 0;  // largest time-axis extent among pre-ISTFT nodes
  std::size_t nodes_checked = 0;
  std::size_t istft_nodes = 0;
};

/// Every node recorded before the ISTFT must stay at frame rate.
template <typename T>
FrameLevelReport inspect_frame_level(const ad::Graph<T>& g, std::size_t frames);

/// mel (frames, mel_dim) -> waveform of out_len samples (0 means frames * frame_shift).
/// `spectrum`, when given, receives the predicted spectrum fed to the ISTFT.
dsp::Waveform synthesize(const dsp::Matrix& mel, const ModelWeights<float>& weights, const ApnetConfig& cfg,
                         std::size_t out_len = 0, FrameLevelReport* report = nullptr,
                         dsp::ComplexSpectrum* spectrum = nullptr);

}  // namespace apnet::nn

#include "apnet/model.hpp"

#include <algorithm>
#include <random>

#include "apnet/error.hpp"

namespace apnet::nn {

void ResNetConfig::validate() const {
  require(channels >= 1, ErrorKind::Config, "resnet channels must be >= 1");
  require(!kernel_sizes.empty(), ErrorKind::Config, "resnet needs at least one block");
  require(dilations.size() == kernel_sizes.size(), ErrorKind::Config,
          "resnet dilations must have one row per block (" + std::to_string(kernel_sizes.size()) + ")");
  for (int k : kernel_sizes) require(k >= 1 && k % 2 == 1, ErrorKind::Config, "resnet kernel sizes must be odd");
  const std::size_t q = dilations.front().size();
  require(q >= 1, ErrorKind::Config, "resnet needs at least one subblock per block");
  for (const auto& row : dilations) {
    require(row.size() == q, ErrorKind::Config, "resnet dilations must be a P x Q grid");
    for (int d : row) require(d >= 1, ErrorKind::Config, "resnet dilations must be >= 1");
  }
  require(lrelu_slope >= 0.0 && lrelu_slope < 1.0, ErrorKind::Config, "lrelu_slope must lie in [0, 1)");
}

void ApnetConfig::validate() const {
  stft.validate();
  mel.validate(stft.sample_rate);
  asp.validate();
  psp.validate();
  require(spec_bins == stft.fft_size / 2 + 1, ErrorKind::Config,
          "spec_bins must equal fft_size/2 + 1 (" + std::to_string(stft.fft_size / 2 + 1) + ")");
  require(mel_dim == mel.num_mels, ErrorKind::Config, "mel_dim must equal mel.num_mels");
  require(input_kernel >= 1 && input_kernel % 2 == 1, ErrorKind::Config, "input_kernel must be odd");
  require(output_kernel >= 1 && output_kernel % 2 == 1, ErrorKind::Config, "output_kernel must be odd");
}

template <typename T>
ad::DiffTensor<T>& ModelWeights<T>::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorKind::Config, "missing weight tensor '" + name + "'");
  return it->second;
}

template <typename T>
const ad::DiffTensor<T>& ModelWeights<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorKind::Config, "missing weight tensor '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ModelWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& kv : tensors) n += kv.second.size();
  return n;
}

template <typename T>
void ModelWeights<T>::zero_grad() {
  for (auto& kv : tensors) kv.second.zero_grad();
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;

namespace {

using Shapes = std::map<std::string, ad::Shape>;

void add_conv(Shapes& s, const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
  s[name + ".weight"] = {out, in, k};
  s[name + ".bias"] = {out};
}

void add_resnet(Shapes& s, const std::string& prefix, const ResNetConfig& r) {
  const auto c = static_cast<std::size_t>(r.channels);
  for (int p = 0; p < r.num_blocks(); ++p) {
    const auto k = static_cast<std::size_t>(r.kernel_sizes[p]);
    for (int q = 0; q < r.subblocks(); ++q) {
      const std::string sub = prefix + ".block" + std::to_string(p) + ".sub" + std::to_string(q);
      add_conv(s, sub + ".dconv", c, c, k);
      add_conv(s, sub + ".conv", c, c, k);
    }
  }
}

bool is_bias(const std::string& name) { return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0; }

const ad::Var& lookup(const Bound& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) fail(ErrorKind::Config, "weight '" + name + "' not bound in graph");
  return it->second;
}

template <typename T>
ad::Var conv(ad::Graph<T>& g, ad::Var x, const Bound& w, const std::string& name, int dilation = 1) {
  return g.conv1d(x, lookup(w, name + ".weight"), lookup(w, name + ".bias"), dilation);
}

}  // namespace

std::map<std::string, ad::Shape> weight_shapes(const ApnetConfig& cfg) {
  cfg.validate();
  Shapes s;
  const auto mel = static_cast<std::size_t>(cfg.mel_dim);
  const auto bins = static_cast<std::size_t>(cfg.spec_bins);
  const auto ik = static_cast<std::size_t>(cfg.input_kernel);
  const auto ok = static_cast<std::size_t>(cfg.output_kernel);
  add_conv(s, "asp.input", cfg.asp.channels, mel, ik);
  add_resnet(s, "asp", cfg.asp);
  add_conv(s, "asp.output", bins, cfg.asp.channels, ok);
  add_conv(s, "psp.input", cfg.psp.channels, mel, ik);
  add_resnet(s, "psp", cfg.psp);
  add_conv(s, "psp.output_real", bins, cfg.psp.channels, ok);
  add_conv(s, "psp.output_imag", bins, cfg.psp.channels, ok);
  return s;
}

ModelWeights<float> init_weights(const ApnetConfig& cfg, std::uint64_t seed, double stddev) {
  ModelWeights<float> w;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (const auto& [name, shape] : weight_shapes(cfg)) {
    ad::DiffTensor<float> t(shape);
    if (!is_bias(name))
      for (auto& v : t.values) v = static_cast<float>(normal(rng));
    w.tensors.emplace(name, std::move(t));
  }
  return w;
}

template <typename T>
Bound bind_parameters(ad::Graph<T>& g, ModelWeights<T>& w) {
  Bound b;
  for (auto& [name, t] : w.tensors) b.emplace(name, g.parameter(t, name));
  return b;
}

template <typename T>
Bound bind_constants(ad::Graph<T>& g, const ModelWeights<T>& w) {
  Bound b;
  for (const auto& [name, t] : w.tensors) b.emplace(name, g.constant(t, name));
  return b;
}

template <typename T>
ad::Var subresblock_forward(ad::Graph<T>& g, ad::Var x, const Bound& w, const std::string& prefix, int kernel,
                            int dilation, double slope) {
  const auto& wshape = g.shape(lookup(w, prefix + ".dconv.weight"));
  require(wshape.size() == 3 && wshape[2] == static_cast<std::size_t>(kernel), ErrorKind::Config,
          prefix + ": kernel size does not match weights");
  ad::Var h = g.leaky_relu(x, slope);
  h = conv(g, h, w, prefix + ".dconv", dilation);
  h = g.leaky_relu(h, slope);
  h = conv(g, h, w, prefix + ".conv", 1);
  return g.add(x, h);
}

template <typename T>
ad::Var resnet_forward(ad::Graph<T>& g, ad::Var x, const ResNetConfig& cfg, const Bound& w, const std::string& prefix) {
  cfg.validate();
  ad::Var sum{};
  for (int p = 0; p < cfg.num_blocks(); ++p) {
    ad::Var h = x;
    for (int q = 0; q < cfg.subblocks(); ++q) {
      const std::string sub = prefix + ".block" + std::to_string(p) + ".sub" + std::to_string(q);
      h = subresblock_forward(g, h, w, sub, cfg.kernel_sizes[p], cfg.dilations[p][q], cfg.lrelu_slope);
    }
    sum = p == 0 ? h : g.add(sum, h);
  }
  if (cfg.num_blocks() > 1) sum = g.scale(sum, 1.0 / cfg.num_blocks());
  return g.leaky_relu(sum, cfg.lrelu_slope);
}

template <typename T>
ad::Var asp_forward(ad::Graph<T>& g, ad::Var mel, const Bound& w, const ApnetConfig& cfg) {
  ad::Var h = conv(g, mel, w, "asp.input");
  h = resnet_forward(g, h, cfg.asp, w, "asp");
  return conv(g, h, w, "asp.output");
}

template <typename T>
PhaseHeads psp_forward(ad::Graph<T>& g, ad::Var mel, const Bound& w, const ApnetConfig& cfg) {
  ad::Var h = conv(g, mel, w, "psp.input");
  h = resnet_forward(g, h, cfg.psp, w, "psp");
  PhaseHeads out;
  out.real = conv(g, h, w, "psp.output_real");
  out.imag = conv(g, h, w, "psp.output_imag");
  out.phase = g.phase(out.real, out.imag);
  return out;
}

template <typename T>
Spectrum reconstruct_spectrum(ad::Graph<T>& g, ad::Var log_amp, ad::Var phase) {
  require(g.shape(log_amp) == g.shape(phase), ErrorKind::InvalidInput,
          "reconstruct_spectrum: log amplitude " + ad::shape_string(g.shape(log_amp)) + " vs phase " +
              ad::shape_string(g.shape(phase)));
  const ad::Var amp = g.exp(log_amp);
  return {g.mul(amp, g.cos(phase)), g.mul(amp, g.sin(phase))};
}

template <typename T>
Prediction forward(ad::Graph<T>& g, ad::Var mel, const Bound& w, const ApnetConfig& cfg) {
  const auto& s = g.shape(mel);
  require(s.size() == 2 && s[0] == static_cast<std::size_t>(cfg.mel_dim) && s[1] >= 1, ErrorKind::InvalidInput,
          "mel input must be (" + std::to_string(cfg.mel_dim) + ", F>=1), got " + ad::shape_string(s));
  const ad::Var log_amp = asp_forward(g, mel, w, cfg);
  const PhaseHeads heads = psp_forward(g, mel, w, cfg);
  Prediction p;
  p.log_amp = g.transpose(log_amp);
  p.real_head = g.transpose(heads.real);
  p.imag_head = g.transpose(heads.imag);
  p.phase = g.transpose(heads.phase);
  return p;
}

template <typename T>
ad::Var mel_input(ad::Graph<T>& g, const dsp::Matrix& mel) {
  std::vector<T> values(mel.rows * mel.cols);
  for (std::size_t f = 0; f < mel.rows; ++f)
    for (std::size_t m = 0; m < mel.cols; ++m) values[m * mel.rows + f] = static_cast<T>(mel(f, m));
  const ad::Var v = g.constant({mel.cols, mel.rows}, std::move(values), "mel");
  g.mark_time_axis(v, 1);
  return v;
}

template <typename T>
FrameLevelReport inspect_frame_level(const ad::Graph<T>& g, std::size_t frames) {
  FrameLevelReport r;
  r.frames = frames;
  r.ok = true;
  for (const auto& n : g.nodes()) {
    if (n.kind == ad::OpKind::Istft) {
      ++r.istft_nodes;
      break;
    }
    ++r.nodes_checked;
    if (n.time_axis >= 0) {
      const std::size_t extent = n.shape.at(static_cast<std::size_t>(n.time_axis));
      r.max_time_extent = std::max(r.max_time_extent, extent);
      if (extent > frames) r.ok = false;
    }
  }
  if (r.istft_nodes == 0) r.ok = false;
  return r;
}

dsp::Waveform synthesize(const dsp::Matrix& mel, const ModelWeights<float>& weights, const ApnetConfig& cfg,
                         std::size_t out_len, FrameLevelReport* report, dsp::ComplexSpectrum* spectrum) {
  require(mel.rows >= 1, ErrorKind::InvalidInput, "synthesize needs at least one mel frame");
  require(mel.cols == static_cast<std::size_t>(cfg.mel_dim), ErrorKind::InvalidInput,
          "mel has " + std::to_string(mel.cols) + " bands, model expects " + std::to_string(cfg.mel_dim));
  const std::size_t frames = mel.rows;
  if (out_len == 0) out_len = frames * static_cast<std::size_t>(cfg.stft.frame_shift);
  ad::Graph<float> g;
  const Bound w = bind_constants(g, weights);
  const ad::Var m = mel_input(g, mel);
  const Prediction p = forward(g, m, w, cfg);
  const Spectrum s = reconstruct_spectrum(g, p.log_amp, p.phase);
  const ad::Var wave = g.istft(s.real, s.imag, cfg.stft, out_len);
  if (report) *report = inspect_frame_level(g, frames);
  if (spectrum) {
    const std::size_t bins = static_cast<std::size_t>(cfg.spec_bins);
    *spectrum = dsp::ComplexSpectrum(frames, bins);
    const auto& re = g.value(s.real);
    const auto& im = g.value(s.imag);
    std::copy(re.begin(), re.end(), spectrum->real.data.begin());
    std::copy(im.begin(), im.end(), spectrum->imag.data.begin());
  }
  const auto& v = g.value(wave);
  return dsp::Waveform{std::vector<double>(v.begin(), v.end()), cfg.stft.sample_rate};
}

#define APNET_INSTANTIATE(T)                                                                                      \
  template Bound bind_parameters<T>(ad::Graph<T>&, ModelWeights<T>&);                                            \
  template Bound bind_constants<T>(ad::Graph<T>&, const ModelWeights<T>&);                                       \
  template ad::Var subresblock_forward<T>(ad::Graph<T>&, ad::Var, const Bound&, const std::string&, int, int,     \
                                          double);                                                                \
  template ad::Var resnet_forward<T>(ad::Graph<T>&, ad::Var, const ResNetConfig&, const Bound&, const std::string&); \
  template ad::Var asp_forward<T>(ad::Graph<T>&, ad::Var, const Bound&, const ApnetConfig&);                     \
  template PhaseHeads psp_forward<T>(ad::Graph<T>&, ad::Var, const Bound&, const ApnetConfig&);                  \
  template Spectrum reconstruct_spectrum<T>(ad::Graph<T>&, ad::Var, ad::Var);                                    \
  template Prediction forward<T>(ad::Graph<T>&, ad::Var, const Bound&, const ApnetConfig&);                      \
  template ad::Var mel_input<T>(ad::Graph<T>&, const dsp::Matrix&);                                              \
  template FrameLevelReport inspect_frame_level<T>(const ad::Graph<T>&, std::size_t);

APNET_INSTANTIATE(float)
APNET_INSTANTIATE(double)

#undef APNET_INSTANTIATE

}  // namespace apnet::nn

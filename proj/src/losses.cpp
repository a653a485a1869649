#include "apnet/losses.hpp"

#include <cmath>
#include <sstream>
#include <tuple>

#include "apnet/error.hpp"

namespace apnet::loss {

void LossWeights::validate() const {
  for (double v : {lambda_a, lambda_p, lambda_s, lambda_ri, lambda_mel})
    require(std::isfinite(v) && v >= 0.0, ErrorKind::Config, "loss weights must be finite and >= 0");
}

std::vector<std::pair<std::string, double>> LossReport::fields() const {
  return {{"L_A", l_a}, {"L_IP", l_ip}, {"L_GD", l_gd},   {"L_PTD", l_ptd}, {"L_P", l_p},           {"L_C", l_c},
          {"L_R", l_r}, {"L_I", l_i},   {"L_S", l_s},     {"L_Mel", l_mel}, {"L_G_total", l_g_total}};
}

std::string LossReport::to_json_line() const {
  std::ostringstream os;
  os.precision(17);
  os << '{';
  bool first = true;
  for (const auto& [name, value] : fields()) {
    if (!first) os << ',';
    first = false;
    os << '"' << name << "\":" << value;
  }
  os << '}';
  return os.str();
}

namespace {

template <typename T>
void require_same(const ad::Graph<T>& g, ad::Var a, ad::Var b, const char* what) {
  require(g.shape(a) == g.shape(b), ErrorKind::InvalidInput,
          std::string(what) + ": shape " + ad::shape_string(g.shape(a)) + " vs " + ad::shape_string(g.shape(b)));
}

template <typename T>
ad::Var neg_cos_mean(ad::Graph<T>& g, ad::Var a, ad::Var b) {
  return g.scale(g.mean_all(g.cos(g.sub(a, b))), -1.0);
}

// Adjacent differences x[i] - x[i+1] along `axis` of a rank-2 tensor.
template <typename T>
ad::Var adjacent_diff(ad::Graph<T>& g, ad::Var x, int axis) {
  const std::size_t n = g.shape(x)[static_cast<std::size_t>(axis)];
  return g.sub(g.slice(x, axis, 0, n - 1), g.slice(x, axis, 1, n - 1));
}

template <typename T>
ad::Var matrix_constant(ad::Graph<T>& g, const dsp::Matrix& m, const char* label, bool frames = true) {
  const ad::Var v = g.constant({m.rows, m.cols}, std::vector<T>(m.data.begin(), m.data.end()), label);
  if (frames) g.mark_time_axis(v, 0);
  return v;
}

}  // namespace

template <typename T>
ad::Var amplitude_loss(ad::Graph<T>& g, ad::Var log_amp_hat, ad::Var log_amp) {
  require_same(g, log_amp_hat, log_amp, "amplitude_loss");
  return g.mean_all(g.square(g.sub(log_amp_hat, log_amp)));
}

template <typename T>
ad::Var instantaneous_phase_loss(ad::Graph<T>& g, ad::Var phase_hat, ad::Var phase) {
  require_same(g, phase_hat, phase, "instantaneous_phase_loss");
  return neg_cos_mean(g, phase_hat, phase);
}

dsp::Matrix group_delay_matrix(std::size_t num_bins) {
  require(num_bins >= 2, ErrorKind::InvalidInput, "group_delay_matrix needs at least 2 bins");
  dsp::Matrix w(num_bins, num_bins - 1);
  for (std::size_t n = 0; n + 1 < num_bins; ++n) {
    w(n, n) = 1.0;
    w(n + 1, n) = -1.0;
  }
  return w;
}

template <typename T>
ad::Var group_delay_loss(ad::Graph<T>& g, ad::Var phase_hat, ad::Var phase) {
  require_same(g, phase_hat, phase, "group_delay_loss");
  require(g.shape(phase).size() == 2 && g.shape(phase)[1] >= 2, ErrorKind::InvalidInput,
          "group_delay_loss needs at least 2 bins");
  return neg_cos_mean(g, adjacent_diff(g, phase_hat, 1), adjacent_diff(g, phase, 1));
}

template <typename T>
ad::Var phase_time_diff_loss(ad::Graph<T>& g, ad::Var phase_hat, ad::Var phase) {
  require_same(g, phase_hat, phase, "phase_time_diff_loss");
  require(g.shape(phase).size() == 2 && g.shape(phase)[0] >= 2, ErrorKind::InvalidInput,
          "phase_time_diff_loss needs at least 2 frames");
  return neg_cos_mean(g, adjacent_diff(g, phase_hat, 0), adjacent_diff(g, phase, 0));
}

template <typename T>
ad::Var phase_loss_total(ad::Graph<T>& g, ad::Var phase_hat, ad::Var phase) {
  return g.add(g.add(instantaneous_phase_loss(g, phase_hat, phase), group_delay_loss(g, phase_hat, phase)),
               phase_time_diff_loss(g, phase_hat, phase));
}

template <typename T>
ad::Var consistency_loss(ad::Graph<T>& g, ad::Var re, ad::Var im, const dsp::StftConfig& cfg) {
  require_same(g, re, im, "consistency_loss");
  const auto& s = g.shape(re);
  require(s.size() == 2 && s[1] == static_cast<std::size_t>(cfg.num_bins()), ErrorKind::InvalidInput,
          "consistency_loss: spectrum must be (F, " + std::to_string(cfg.num_bins()) + "), got " +
              ad::shape_string(s));
  const std::size_t frames = s[0];
  const std::size_t bins = s[1];
  const ad::Var wave = g.istft(re, im, cfg, frames * static_cast<std::size_t>(cfg.frame_shift));
  const ad::Var again = g.stft(wave, cfg);
  const ad::Var dre = g.sub(g.slice(again, 1, 0, bins), re);
  const ad::Var dim = g.sub(g.slice(again, 1, bins, bins), im);
  return g.mean_all(g.add(g.square(dre), g.square(dim)));
}

template <typename T>
std::pair<ad::Var, ad::Var> real_imag_losses(ad::Graph<T>& g, ad::Var re_hat, ad::Var im_hat, ad::Var re,
                                             ad::Var im) {
  require_same(g, re_hat, re, "real_imag_losses");
  require_same(g, im_hat, im, "real_imag_losses");
  return {g.mean_all(g.abs(g.sub(re_hat, re))), g.mean_all(g.abs(g.sub(im_hat, im)))};
}

LossSetup LossSetup::make(const dsp::StftConfig& stft, const dsp::MelConfig& mel) {
  stft.validate();
  mel.validate(stft.sample_rate);
  return {stft, mel, dsp::mel_filterbank(mel, stft)};
}

template <typename T>
ad::Var mel_graph(ad::Graph<T>& g, ad::Var wave, const LossSetup& setup) {
  const std::size_t bins = static_cast<std::size_t>(setup.stft.num_bins());
  require(setup.filterbank.cols == bins, ErrorKind::Config, "mel filterbank does not match the STFT bin count");
  const ad::Var spec = g.stft(wave, setup.stft);
  const ad::Var mag = g.magnitude(g.slice(spec, 1, 0, bins), g.slice(spec, 1, bins, bins));
  const dsp::Matrix& fb = setup.filterbank;
  std::vector<T> fbt(fb.rows * fb.cols);
  for (std::size_t m = 0; m < fb.rows; ++m)
    for (std::size_t k = 0; k < fb.cols; ++k) fbt[k * fb.rows + m] = static_cast<T>(fb(m, k));
  const ad::Var fb_t = g.constant({fb.cols, fb.rows}, std::move(fbt), "mel_filterbank");
  return g.log(g.clamp_min(g.matmul(mag, fb_t), setup.mel.log_floor));
}

template <typename T>
ad::Var mel_loss(ad::Graph<T>& g, ad::Var wave_hat, ad::Var wave, const LossSetup& setup) {
  require(g.shape(wave_hat).size() == 1 && g.shape(wave_hat) == g.shape(wave), ErrorKind::InvalidInput,
          "mel_loss: waveform lengths differ (" + ad::shape_string(g.shape(wave_hat)) + " vs " +
              ad::shape_string(g.shape(wave)) + ")");
  return g.mean_all(g.abs(g.sub(mel_graph(g, wave_hat, setup), mel_graph(g, wave, setup))));
}

NaturalTargets natural_targets(std::span<const double> wave, const LossSetup& setup) {
  require(!wave.empty(), ErrorKind::InvalidInput, "natural_targets: empty waveform");
  NaturalTargets t;
  t.wave.assign(wave.begin(), wave.end());
  dsp::ComplexSpectrum s = dsp::stft(wave, setup.stft);
  t.log_amp = dsp::log_amplitude(s);
  t.phase = dsp::phase_spectrum(s);
  t.mel = dsp::mel_spectrogram(s, setup.filterbank, setup.mel.log_floor);
  t.real = std::move(s.real);
  t.imag = std::move(s.imag);
  return t;
}

template <typename T>
LossReport GeneratorLoss<T>::report(const ad::Graph<T>& g) const {
  LossReport r;
  r.l_a = g.item(l_a);
  r.l_ip = g.item(l_ip);
  r.l_gd = g.item(l_gd);
  r.l_ptd = g.item(l_ptd);
  r.l_p = g.item(l_p);
  r.l_c = g.item(l_c);
  r.l_r = g.item(l_r);
  r.l_i = g.item(l_i);
  r.l_s = g.item(l_s);
  r.l_mel = g.item(l_mel);
  r.l_g_total = g.item(total);
  return r;
}

template <typename T>
GeneratorLoss<T> generator_loss(ad::Graph<T>& g, ad::Var log_amp_hat, ad::Var phase_hat,
                                const NaturalTargets& target, const LossSetup& setup, const LossWeights& w) {
  w.validate();
  const ad::Var log_amp = matrix_constant(g, target.log_amp, "target_log_amp");
  const ad::Var phase = matrix_constant(g, target.phase, "target_phase");
  const ad::Var re = matrix_constant(g, target.real, "target_real");
  const ad::Var im = matrix_constant(g, target.imag, "target_imag");

  GeneratorLoss<T> out;
  out.l_a = amplitude_loss(g, log_amp_hat, log_amp);
  out.l_ip = instantaneous_phase_loss(g, phase_hat, phase);
  out.l_gd = group_delay_loss(g, phase_hat, phase);
  out.l_ptd = phase_time_diff_loss(g, phase_hat, phase);
  out.l_p = g.add(g.add(out.l_ip, out.l_gd), out.l_ptd);

  const ad::Var amp = g.exp(log_amp_hat);
  const ad::Var re_hat = g.mul(amp, g.cos(phase_hat));
  const ad::Var im_hat = g.mul(amp, g.sin(phase_hat));
  const std::size_t frames = g.shape(log_amp_hat)[0];
  const std::size_t full = frames * static_cast<std::size_t>(setup.stft.frame_shift);
  require(target.wave.size() <= full && setup.stft.num_frames(target.wave.size()) == frames,
          ErrorKind::InvalidInput, "generator_loss: target waveform does not match the frame count");

  // Consistency shares the synthesized waveform with the mel term.
  out.wave_hat = g.istft(re_hat, im_hat, setup.stft, full);
  const std::size_t bins = g.shape(re_hat)[1];
  const ad::Var again = g.stft(out.wave_hat, setup.stft);
  const ad::Var dre = g.sub(g.slice(again, 1, 0, bins), re_hat);
  const ad::Var dim = g.sub(g.slice(again, 1, bins, bins), im_hat);
  out.l_c = g.mean_all(g.add(g.square(dre), g.square(dim)));

  std::tie(out.l_r, out.l_i) = real_imag_losses(g, re_hat, im_hat, re, im);
  out.l_s = g.add(out.l_c, g.scale(g.add(out.l_r, out.l_i), w.lambda_ri));

  const ad::Var wave = g.constant({target.wave.size()}, std::vector<T>(target.wave.begin(), target.wave.end()),
                                  "target_wave");
  const ad::Var wave_hat =
      target.wave.size() == full ? out.wave_hat : g.slice(out.wave_hat, 0, 0, target.wave.size());
  out.l_mel = mel_loss(g, wave_hat, wave, setup);

  out.total = g.add(g.add(g.scale(out.l_a, w.lambda_a), g.scale(out.l_p, w.lambda_p)),
                    g.add(g.scale(out.l_s, w.lambda_s), g.scale(out.l_mel, w.lambda_mel)));
  return out;
}

#define APNET_INSTANTIATE(T)                                                                                       \
  template ad::Var amplitude_loss<T>(ad::Graph<T>&, ad::Var, ad::Var);                                            \
  template ad::Var instantaneous_phase_loss<T>(ad::Graph<T>&, ad::Var, ad::Var);                                  \
  template ad::Var group_delay_loss<T>(ad::Graph<T>&, ad::Var, ad::Var);                                          \
  template ad::Var phase_time_diff_loss<T>(ad::Graph<T>&, ad::Var, ad::Var);                                      \
  template ad::Var phase_loss_total<T>(ad::Graph<T>&, ad::Var, ad::Var);                                          \
  template ad::Var consistency_loss<T>(ad::Graph<T>&, ad::Var, ad::Var, const dsp::StftConfig&);                  \
  template std::pair<ad::Var, ad::Var> real_imag_losses<T>(ad::Graph<T>&, ad::Var, ad::Var, ad::Var, ad::Var);    \
  template ad::Var mel_graph<T>(ad::Graph<T>&, ad::Var, const LossSetup&);                                        \
  template ad::Var mel_loss<T>(ad::Graph<T>&, ad::Var, ad::Var, const LossSetup&);                                \
  template struct GeneratorLoss<T>;                                                                               \
  template GeneratorLoss<T> generator_loss<T>(ad::Graph<T>&, ad::Var, ad::Var, const NaturalTargets&,             \
                                              const LossSetup&, const LossWeights&);

APNET_INSTANTIATE(float)
APNET_INSTANTIATE(double)

#undef APNET_INSTANTIATE

}  // namespace apnet::loss

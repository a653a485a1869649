#include "apnet/metrics.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <thread>

#include "apnet/error.hpp"
#include "apnet/losses.hpp"
#include "json.hpp"

namespace apnet::metrics {

namespace {

void require_equal_length(std::span<const double> a, std::span<const double> b, const char* what) {
  require(a.size() == b.size(), ErrorKind::InvalidInput,
          std::string(what) + ": waveform lengths differ (" + std::to_string(a.size()) + " vs " +
              std::to_string(b.size()) + ")");
  require(!a.empty(), ErrorKind::InvalidInput, std::string(what) + ": empty waveform");
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

double snr(std::span<const double> ref, std::span<const double> test) {
  require_equal_length(ref, test, "snr");
  double signal = 0, noise = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    signal += ref[i] * ref[i];
    const double d = ref[i] - test[i];
    noise += d * d;
  }
  require(signal > 0, ErrorKind::InvalidInput, "snr: reference waveform is all zero");
  if (noise == 0) return kSnrCapDb;
  return std::min(kSnrCapDb, 10.0 * std::log10(signal / noise));
}

double las_rmse(std::span<const double> ref, std::span<const double> test, const dsp::StftConfig& cfg,
                double floor) {
  require_equal_length(ref, test, "las_rmse");
  const dsp::Matrix a = dsp::log_amplitude(dsp::stft(ref, cfg), floor);
  const dsp::Matrix b = dsp::log_amplitude(dsp::stft(test, cfg), floor);
  const double to_db = 20.0 / std::log(10.0);
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = to_db * (a.data[i] - b.data[i]);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.data.size()));
}

dsp::Matrix mel_cepstrum(const dsp::Matrix& log_mel, int order) {
  const std::size_t m = log_mel.cols;
  require(order >= 1 && static_cast<std::size_t>(order) <= m, ErrorKind::InvalidInput,
          "mel_cepstrum: order " + std::to_string(order) + " outside [1, " + std::to_string(m) + "]");
  const std::size_t k_count = static_cast<std::size_t>(order);
  dsp::Matrix basis(k_count, m);
  for (std::size_t k = 0; k < k_count; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(m));
    for (std::size_t n = 0; n < m; ++n)
      basis(k, n) = scale * std::cos(dsp::kPi * static_cast<double>(k) * (static_cast<double>(n) + 0.5) /
                                     static_cast<double>(m));
  }
  dsp::Matrix out(log_mel.rows, k_count);
  for (std::size_t f = 0; f < log_mel.rows; ++f)
    for (std::size_t k = 0; k < k_count; ++k) {
      double acc = 0;
      for (std::size_t n = 0; n < m; ++n) acc += basis(k, n) * log_mel(f, n);
      out(f, k) = acc;
    }
  return out;
}

double mcd(std::span<const double> ref, std::span<const double> test, const dsp::StftConfig& cfg,
           const dsp::MelConfig& mel, int order) {
  require_equal_length(ref, test, "mcd");
  const dsp::Matrix fb = dsp::mel_filterbank(mel, cfg);
  const dsp::Matrix a = mel_cepstrum(dsp::mel_spectrogram(dsp::stft(ref, cfg), fb, mel.log_floor), order);
  const dsp::Matrix b = mel_cepstrum(dsp::mel_spectrogram(dsp::stft(test, cfg), fb, mel.log_floor), order);
  double total = 0;
  for (std::size_t f = 0; f < a.rows; ++f) {
    double acc = 0;
    for (std::size_t k = 1; k < a.cols; ++k) {
      const double d = a(f, k) - b(f, k);
      acc += d * d;
    }
    total += std::sqrt(acc);
  }
  return 10.0 * std::sqrt(2.0) / std::log(10.0) * total / static_cast<double>(a.rows);
}

double consistency_gap(const dsp::ComplexSpectrum& s, const dsp::StftConfig& cfg) {
  require(s.real.same_shape(s.imag), ErrorKind::InvalidInput, "consistency_gap: real/imag shapes differ");
  ad::Graph<double> g;
  const ad::Shape shape{s.frames(), s.bins()};
  const ad::Var re = g.constant(shape, s.real.data);
  const ad::Var im = g.constant(shape, s.imag.data);
  return g.value(loss::consistency_loss(g, re, im, cfg))[0];
}

EvalReport evaluate(const std::string& clip_id, std::span<const double> ref, std::span<const double> test,
                    const dsp::StftConfig& cfg, const dsp::MelConfig& mel) {
  EvalReport r;
  r.clip_id = clip_id;
  r.snr_db = snr(ref, test);
  r.las_rmse_db = las_rmse(ref, test, cfg, mel.log_floor);
  r.mcd_db = mcd(ref, test, cfg, mel);
  return r;
}

EvalReport mean_report(const std::vector<EvalReport>& rows) {
  EvalReport m;
  m.clip_id = "mean";
  if (rows.empty()) return m;
  double gap = 0, rtf = 0;
  std::size_t gaps = 0, rtfs = 0;
  for (const auto& r : rows) {
    m.snr_db += r.snr_db;
    m.las_rmse_db += r.las_rmse_db;
    m.mcd_db += r.mcd_db;
    if (r.consistency_gap) gap += *r.consistency_gap, ++gaps;
    if (r.rtf) rtf += *r.rtf, ++rtfs;
  }
  const double n = static_cast<double>(rows.size());
  m.snr_db /= n;
  m.las_rmse_db /= n;
  m.mcd_db /= n;
  if (gaps) m.consistency_gap = gap / static_cast<double>(gaps);
  if (rtfs) m.rtf = rtf / static_cast<double>(rtfs);
  return m;
}

std::string csv_header() { return "clip_id,snr_db,las_rmse_db,mcd_db,consistency_gap,rtf"; }

std::string csv_row(const EvalReport& r) {
  std::string id = r.clip_id;
  if (id.find_first_of(",\"\n") != std::string::npos) {
    std::string q = "\"";
    for (char c : id) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    id = q + "\"";
  }
  return id + "," + fmt("%.6f", r.snr_db) + "," + fmt("%.6f", r.las_rmse_db) + "," + fmt("%.6f", r.mcd_db) + "," +
         (r.consistency_gap ? fmt("%.6e", *r.consistency_gap) : "") + "," + (r.rtf ? fmt("%.6f", *r.rtf) : "");
}

std::string json_line(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["clip_id"] = r.clip_id;
  j["snr_db"] = r.snr_db;
  j["las_rmse_db"] = r.las_rmse_db;
  j["mcd_db"] = r.mcd_db;
  j["consistency_gap"] = r.consistency_gap ? nlohmann::ordered_json(*r.consistency_gap) : nullptr;
  j["rtf"] = r.rtf ? nlohmann::ordered_json(*r.rtf) : nullptr;
  return j.dump();
}

RtfResult measure_rtf(const std::vector<dsp::Matrix>& mels, const nn::ModelWeights<float>& weights,
                      const nn::ApnetConfig& cfg, int threads) {
  require(threads >= 1, ErrorKind::Usage, "measure_rtf: threads must be >= 1");
  require(!mels.empty(), ErrorKind::InvalidInput, "measure_rtf: empty mel corpus");
  RtfResult r;
  r.threads = threads;
  r.utterances = mels.size();
  std::size_t samples = 0;
  for (const auto& m : mels) samples += m.rows * static_cast<std::size_t>(cfg.stft.frame_shift);
  r.audio_seconds = static_cast<double>(samples) / cfg.stft.sample_rate;

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  auto work = [&](std::size_t id) {
    try {
      for (std::size_t i = next++; i < mels.size(); i = next++) nn::synthesize(mels[i], weights, cfg);
    } catch (...) {
      errors[id] = std::current_exception();
    }
  };
  const auto t0 = std::chrono::steady_clock::now();
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, static_cast<std::size_t>(t));
    for (auto& t : pool) t.join();
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  r.rtf = r.wall_seconds / r.audio_seconds;
  return r;
}

}  // namespace apnet::metrics

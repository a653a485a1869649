#include "apnet/app.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <random>
#include <thread>

#include "apnet/audio_io.hpp"
#include "apnet/error.hpp"
#include "json.hpp"

namespace apnet::app {

namespace {

io::FeatureFile feature(io::FeatureKind kind, const nn::ApnetConfig& cfg, dsp::Matrix data) {
  io::FeatureFile f;
  f.kind = kind;
  f.sample_rate = cfg.stft.sample_rate;
  f.frame_shift = cfg.stft.frame_shift;
  f.data = std::move(data);
  return f;
}

io::FeatureFile read_kind(const fs::path& path, io::FeatureKind kind, const nn::ApnetConfig& cfg) {
  io::FeatureFile f = io::read_features(path);
  require(f.kind == kind, ErrorKind::InvalidInput,
          "'" + path.string() + "' holds " + io::feature_kind_name(f.kind) + " features, expected " +
              io::feature_kind_name(kind));
  require(f.sample_rate == cfg.stft.sample_rate && f.frame_shift == cfg.stft.frame_shift, ErrorKind::Config,
          "'" + path.string() + "' was analysed at " + std::to_string(f.sample_rate) + " Hz / shift " +
              std::to_string(f.frame_shift) + ", configuration has " + std::to_string(cfg.stft.sample_rate) +
              " Hz / shift " + std::to_string(cfg.stft.frame_shift));
  return f;
}

/// Synthesis from natural features exactly as stored in ".apf" files.
dsp::Waveform resynthesize(const dsp::Matrix& log_amp, const dsp::Matrix& phase, const nn::ApnetConfig& cfg,
                           std::size_t out_len) {
  require(log_amp.same_shape(phase), ErrorKind::InvalidInput, "log-amplitude and phase frame counts differ");
  require(log_amp.cols == static_cast<std::size_t>(cfg.spec_bins), ErrorKind::InvalidInput,
          "spectra have " + std::to_string(log_amp.cols) + " bins, configuration expects " +
              std::to_string(cfg.spec_bins));
  dsp::ComplexSpectrum s(log_amp.rows, log_amp.cols);
  for (std::size_t i = 0; i < log_amp.data.size(); ++i) {
    const double a = std::exp(log_amp.data[i]);
    s.real.data[i] = a * std::cos(phase.data[i]);
    s.imag.data[i] = a * std::sin(phase.data[i]);
  }
  return dsp::istft(s, cfg.stft, out_len);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

EpochSummary summarize(const std::vector<train::StepLog>& steps) {
  EpochSummary e;
  e.epoch = steps.front().epoch;
  e.steps = static_cast<std::int64_t>(steps.size());
  e.lr = steps.front().lr;
  const auto names = steps.front().report.fields();
  std::vector<double> medians;
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<double> col;
    for (const auto& s : steps) col.push_back(s.report.fields()[k].second);
    medians.push_back(median(std::move(col)));
  }
  loss::LossReport& r = e.median;
  double* slots[] = {&r.l_a, &r.l_ip, &r.l_gd, &r.l_ptd, &r.l_p, &r.l_c, &r.l_r, &r.l_i, &r.l_s, &r.l_mel, &r.l_g_total};
  for (std::size_t k = 0; k < medians.size(); ++k) *slots[k] = medians[k];
  return e;
}

std::map<std::string, fs::path> wavs_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& p : list_wavs(dir)) out.emplace(p.stem().string(), p);
  return out;
}

}  // namespace

AnalyzeResult analyze(const config::Settings& s, const fs::path& wav, const fs::path& out_dir) {
  const nn::ApnetConfig& cfg = s.model;
  const dsp::Waveform x = io::read_wav(wav, cfg.stft.sample_rate);
  require(!x.samples.empty(), ErrorKind::InvalidInput, "'" + wav.string() + "' contains no samples");
  const dsp::ComplexSpectrum spec = dsp::stft(x, cfg.stft);
  const dsp::Matrix fb = dsp::mel_filterbank(cfg.mel, cfg.stft);
  fs::create_directories(out_dir);
  AnalyzeResult r;
  r.frames = spec.frames();
  const std::pair<const char*, io::FeatureFile> files[] = {
      {"mel.apf", feature(io::FeatureKind::Mel, cfg, dsp::mel_spectrogram(spec, fb, cfg.mel.log_floor))},
      {"logamp.apf", feature(io::FeatureKind::LogAmp, cfg, dsp::log_amplitude(spec, cfg.mel.log_floor))},
      {"phase.apf", feature(io::FeatureKind::Phase, cfg, dsp::phase_spectrum(spec))},
  };
  for (const auto& [name, f] : files) {
    io::write_features(out_dir / name, f);
    r.files.push_back(out_dir / name);
  }
  return r;
}

CopySynthResult copysynth(const config::Settings& s, const fs::path& input, const fs::path& out_wav) {
  const nn::ApnetConfig& cfg = s.model;
  CopySynthResult r;
  dsp::Matrix log_amp, phase;
  std::optional<dsp::Waveform> x;
  if (fs::is_directory(input)) {
    log_amp = read_kind(input / "logamp.apf", io::FeatureKind::LogAmp, cfg).data;
    phase = read_kind(input / "phase.apf", io::FeatureKind::Phase, cfg).data;
  } else {
    x = io::read_wav(input, cfg.stft.sample_rate);
    require(!x->samples.empty(), ErrorKind::InvalidInput, "'" + input.string() + "' contains no samples");
    const dsp::ComplexSpectrum spec = dsp::stft(*x, cfg.stft);
    log_amp = io::to_f32_precision(dsp::log_amplitude(spec, cfg.mel.log_floor));
    phase = io::to_f32_precision(dsp::phase_spectrum(spec));
  }
  const std::size_t out_len = x ? x->size() : log_amp.rows * static_cast<std::size_t>(cfg.stft.frame_shift);
  const dsp::Waveform y = resynthesize(log_amp, phase, cfg, out_len);
  io::write_wav(out_wav, y);
  r.samples = y.size();
  const bool silent = x && std::all_of(x->samples.begin(), x->samples.end(), [](double v) { return v == 0.0; });
  if (x && !silent) r.snr_db = metrics::snr(x->samples, io::quantize_pcm16(y.samples));
  return r;
}

std::vector<fs::path> list_wavs(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::InvalidInput, "'" + dir.string() + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string EpochSummary::to_json_line() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["steps"] = steps;
  j["lr"] = lr;
  for (const auto& [k, v] : median.fields()) j["median_" + k] = v;
  return j.dump();
}

train::TrainResult run_training(const config::Settings& s, const fs::path& corpus_dir, const fs::path& out_dir,
                                const std::optional<fs::path>& resume, const TrainCallbacks& callbacks) {
  const auto files = list_wavs(corpus_dir);
  require(!files.empty(), ErrorKind::InvalidInput, "no .wav files in '" + corpus_dir.string() + "'");
  std::vector<dsp::Waveform> corpus;
  for (const auto& f : files) {
    corpus.push_back(io::read_wav(f, s.model.stft.sample_rate));
    require(!corpus.back().samples.empty(), ErrorKind::InvalidInput, "'" + f.string() + "' contains no samples");
  }
  std::optional<io::Checkpoint> ck;
  if (resume) ck = io::load_checkpoint(*resume);

  std::vector<train::StepLog> epoch_steps;
  auto flush = [&] {
    if (!epoch_steps.empty() && callbacks.on_epoch) callbacks.on_epoch(summarize(epoch_steps));
    epoch_steps.clear();
  };
  train::TrainOptions opt;
  opt.out_dir = out_dir;
  opt.resume = ck ? &*ck : nullptr;
  opt.on_step = [&](const train::StepLog& log) {
    if (!epoch_steps.empty() && epoch_steps.front().epoch != log.epoch) flush();
    epoch_steps.push_back(log);
    if (callbacks.on_step) callbacks.on_step(log);
  };
  train::TrainResult r = train::train(corpus, s.model, s.train, s.loss, opt);
  flush();
  return r;
}

void require_feature_match(const nn::ApnetConfig& checkpoint_cfg, const nn::ApnetConfig& requested,
                           const std::string& what) {
  std::string list;
  for (const auto& d : io::config_differences(checkpoint_cfg, requested))
    if (d.rfind("stft.", 0) == 0 || d.rfind("mel.", 0) == 0 || d == "mel_dim")
      list += (list.empty() ? "" : ", ") + d;
  require(list.empty(), ErrorKind::Config, what + " feature configuration differs from the checkpoint in: " + list);
}

SynthesizeResult synthesize_file(const io::Checkpoint& ckpt, const config::Settings& s, const fs::path& input,
                                 const fs::path& out_wav) {
  const nn::ApnetConfig& cfg = ckpt.config;
  dsp::Matrix mel;
  std::size_t out_len = 0;
  std::string ext = input.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".apf") {
    const io::FeatureFile f = io::read_features(input);
    require(f.kind == io::FeatureKind::Mel, ErrorKind::InvalidInput,
            "'" + input.string() + "' holds " + io::feature_kind_name(f.kind) + " features, expected mel");
    std::string list;
    auto differs = [&](bool bad, const std::string& name) {
      if (bad) list += (list.empty() ? "" : ", ") + name;
    };
    differs(f.sample_rate != cfg.stft.sample_rate, "stft.sample_rate");
    differs(f.frame_shift != cfg.stft.frame_shift, "stft.frame_shift");
    differs(f.data.cols != static_cast<std::size_t>(cfg.mel_dim), "mel_dim");
    require(list.empty(), ErrorKind::Config, "'" + input.string() + "' differs from the checkpoint in: " + list);
    mel = f.data;
  } else {
    require_feature_match(cfg, s.model, "requested");
    const dsp::Waveform x = io::read_wav(input, cfg.stft.sample_rate);
    require(!x.samples.empty(), ErrorKind::InvalidInput, "'" + input.string() + "' contains no samples");
    mel = dsp::mel_spectrogram(x, cfg.stft, cfg.mel);
    out_len = x.size();
  }
  const dsp::Waveform y = nn::synthesize(mel, ckpt.weights, cfg, out_len);
  io::write_wav(out_wav, y);
  return {mel.rows, y.size()};
}

EvalSummary evaluate(const config::Settings& s, const EvalOptions& options) {
  require(options.syn_dir.has_value() != (options.model != nullptr), ErrorKind::Usage,
          "eval needs exactly one of a synthesis directory or a checkpoint");
  require(options.threads >= 1, ErrorKind::Usage, "eval: threads must be >= 1");
  auto warn = [&](const std::string& m) {
    if (options.on_warning) options.on_warning(m);
  };
  const auto refs = wavs_by_stem(options.ref_dir);
  EvalSummary out;
  struct Job {
    std::string id;
    fs::path ref, syn;
  };
  std::vector<Job> jobs;
  if (options.syn_dir) {
    const auto syns = wavs_by_stem(*options.syn_dir);
    for (const auto& [id, p] : refs) {
      if (syns.count(id)) {
        jobs.push_back({id, p, syns.at(id)});
      } else {
        out.skipped.push_back(id);
        warn("no synthesized file for reference '" + id + "', skipped");
      }
    }
    for (const auto& [id, p] : syns)
      if (!refs.count(id)) {
        out.skipped.push_back(id);
        warn("no reference file for synthesized '" + id + "', skipped");
      }
  } else {
    require_feature_match(options.model->config, s.model, "requested");
    for (const auto& [id, p] : refs) jobs.push_back({id, p, {}});
  }

  const nn::ApnetConfig& cfg = options.model ? options.model->config : s.model;
  std::vector<std::optional<metrics::EvalReport>> results(jobs.size());
  std::vector<std::string> problems(jobs.size());
  auto run = [&](std::size_t i) {
    const Job& job = jobs[i];
    const dsp::Waveform ref = io::read_wav(job.ref, cfg.stft.sample_rate);
    if (!std::any_of(ref.samples.begin(), ref.samples.end(), [](double v) { return v != 0.0; })) {
      problems[i] = "reference '" + job.id + "' is silent, skipped";
      return;
    }
    if (options.model) {
      const dsp::Matrix mel = dsp::mel_spectrogram(ref, cfg.stft, cfg.mel);
      dsp::ComplexSpectrum spec;
      const auto t0 = std::chrono::steady_clock::now();
      const dsp::Waveform y = nn::synthesize(mel, options.model->weights, cfg, ref.size(), nullptr, &spec);
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      metrics::EvalReport r = metrics::evaluate(job.id, ref.samples, y.samples, cfg.stft, cfg.mel);
      r.consistency_gap = metrics::consistency_gap(spec, cfg.stft);
      r.rtf = wall / (static_cast<double>(ref.size()) / cfg.stft.sample_rate);
      results[i] = r;
      return;
    }
    dsp::Waveform syn = io::read_wav(job.syn, cfg.stft.sample_rate);
    const std::size_t n = ref.size();
    if (syn.size() != n) {
      const std::size_t gap = syn.size() > n ? syn.size() - n : n - syn.size();
      if (gap >= static_cast<std::size_t>(cfg.stft.frame_shift)) {
        problems[i] = "'" + job.id + "' lengths differ by " + std::to_string(gap) + " samples, skipped";
        return;
      }
      syn.samples.resize(n, 0.0);
    }
    results[i] = metrics::evaluate(job.id, ref.samples, syn.samples, cfg.stft, cfg.mel);
  };

  // Timed synthesis runs alone so the real-time factor is not shared with other work.
  const int threads = options.model ? 1 : std::min<int>(options.threads, static_cast<int>(std::max<std::size_t>(jobs.size(), 1)));
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        run(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    if (results[i]) {
      out.rows.push_back(*results[i]);
    } else {
      out.skipped.push_back(jobs[i].id);
      warn(problems[i]);
    }
  }
  out.mean = metrics::mean_report(out.rows);
  return out;
}

std::vector<dsp::Matrix> synthetic_mels(const nn::ApnetConfig& cfg, double seconds, std::uint64_t seed) {
  require(seconds > 0, ErrorKind::Usage, "duration must be positive");
  const auto frames_per_second = static_cast<std::size_t>(cfg.stft.sample_rate / cfg.stft.frame_shift);
  auto total = static_cast<std::size_t>(std::ceil(seconds * cfg.stft.sample_rate / cfg.stft.frame_shift));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> level(-5.0, 2.0);
  std::vector<dsp::Matrix> out;
  while (total > 0) {
    const std::size_t frames = std::min(total, frames_per_second);
    dsp::Matrix m(frames, static_cast<std::size_t>(cfg.mel_dim));
    for (double& v : m.data) v = std::min(level(rng), 2.0);
    out.push_back(std::move(m));
    total -= frames;
  }
  return out;
}

std::vector<metrics::RtfResult> bench(const io::Checkpoint& ckpt, double seconds, const std::vector<int>& threads,
                                      std::uint64_t seed) {
  require(!threads.empty(), ErrorKind::Usage, "bench needs at least one thread count");
  const auto mels = synthetic_mels(ckpt.config, seconds, seed);
  nn::synthesize(mels.front(), ckpt.weights, ckpt.config);  // warm FFT plans and allocator
  std::vector<metrics::RtfResult> out;
  for (int t : threads) out.push_back(metrics::measure_rtf(mels, ckpt.weights, ckpt.config, t));
  return out;
}

}  // namespace apnet::app

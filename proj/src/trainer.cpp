#include "apnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "apnet/checkpoint.hpp"
#include "apnet/error.hpp"

namespace apnet::train {

void TrainConfig::validate(int frame_shift) const {
  require(std::isfinite(learning_rate) && learning_rate > 0.0, ErrorKind::Config, "learning_rate must be > 0");
  require(lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::Config, "lr_decay must lie in (0, 1]");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::Config,
          "adam betas must lie in [0, 1)");
  require(adam_eps > 0.0, ErrorKind::Config, "adam_eps must be > 0");
  require(weight_decay >= 0.0, ErrorKind::Config, "weight_decay must be >= 0");
  require(batch_size >= 1, ErrorKind::Config, "batch_size must be >= 1");
  require(segment_samples >= frame_shift && segment_samples % frame_shift == 0, ErrorKind::Config,
          "segment_samples must be a positive multiple of frame_shift (" + std::to_string(frame_shift) + ")");
  require(epochs >= 0, ErrorKind::Config, "epochs must be >= 0");
  require(max_steps >= 0, ErrorKind::Config, "max_steps must be >= 0");
  require(checkpoint_every >= 0, ErrorKind::Config, "checkpoint_every must be >= 0");
}

OptimizerState OptimizerState::zeros_like(const nn::ModelWeights<float>& w) {
  OptimizerState s;
  for (const auto& [name, t] : w.tensors) {
    s.m.emplace(name, ad::DiffTensor<float>(t.shape));
    s.v.emplace(name, ad::DiffTensor<float>(t.shape));
  }
  return s;
}

void adamw_step(nn::ModelWeights<float>& w, OptimizerState& state, const TrainConfig& cfg, double lr) {
  for (auto& [name, t] : w.tensors) {
    t.ensure_grad();
    for (float g : t.grad)
      if (!std::isfinite(g)) fail(ErrorKind::Numeric, "non-finite gradient in weight tensor '" + name + "'");
    const auto m = state.m.find(name);
    const auto v = state.v.find(name);
    require(m != state.m.end() && v != state.v.end() && m->second.shape == t.shape && v->second.shape == t.shape,
            ErrorKind::InvalidInput, "optimizer moments do not mirror weight '" + name + "'");
  }
  const double t1 = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(cfg.beta1, t1);
  const double c2 = 1.0 - std::pow(cfg.beta2, t1);
  for (auto& [name, t] : w.tensors) {
    auto& m = state.m.at(name).values;
    auto& v = state.v.at(name).values;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double g = t.grad[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double p = t.values[i];
      p -= lr * cfg.weight_decay * p;
      p -= lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
      t.values[i] = static_cast<float>(p);
    }
  }
  ++state.step;
}

double lr_schedule(const TrainConfig& cfg, std::int64_t epoch) {
  require(epoch >= 0, ErrorKind::InvalidInput, "epoch must be >= 0");
  return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

std::size_t segment_start(std::size_t clip_len, std::size_t segment, std::size_t frame_shift, std::mt19937_64& rng) {
  if (clip_len <= segment) return 0;
  const std::size_t last = (clip_len - segment) / frame_shift;
  std::uniform_int_distribution<std::size_t> pick(0, last);
  return pick(rng) * frame_shift;
}

namespace {

std::vector<double> cut(const std::vector<double>& clip, std::size_t start, std::size_t len) {
  std::vector<double> out(len, 0.0);
  const std::size_t n = std::min(len, clip.size() - std::min(start, clip.size()));
  std::copy_n(clip.begin() + static_cast<std::ptrdiff_t>(start), n, out.begin());
  return out;
}

void accumulate(loss::LossReport& dst, const loss::LossReport& src, double w) {
  dst.l_a += w * src.l_a;
  dst.l_ip += w * src.l_ip;
  dst.l_gd += w * src.l_gd;
  dst.l_ptd += w * src.l_ptd;
  dst.l_p += w * src.l_p;
  dst.l_c += w * src.l_c;
  dst.l_r += w * src.l_r;
  dst.l_i += w * src.l_i;
  dst.l_s += w * src.l_s;
  dst.l_mel += w * src.l_mel;
  dst.l_g_total += w * src.l_g_total;
}

}  // namespace

Segment sample_segment(const dsp::Waveform& clip, int segment_samples, const loss::LossSetup& setup,
                       std::mt19937_64& rng) {
  require(segment_samples > 0, ErrorKind::InvalidInput, "segment_samples must be > 0");
  const auto seg = static_cast<std::size_t>(segment_samples);
  Segment s;
  s.start = segment_start(clip.size(), seg, static_cast<std::size_t>(setup.stft.frame_shift), rng);
  s.wave = dsp::Waveform{cut(clip.samples, s.start, seg), clip.sample_rate};
  s.mel = dsp::mel_spectrogram(dsp::stft(s.wave.samples, setup.stft), setup.filterbank, setup.mel.log_floor);
  return s;
}

std::string StepLog::to_json_line() const {
  std::string line = report.to_json_line();
  char buf[160];
  std::snprintf(buf, sizeof buf, ",\"step\":%lld,\"epoch\":%lld,\"lr\":%.17g,\"wall_ms\":%.3f}",
                static_cast<long long>(step), static_cast<long long>(epoch), lr, wall_ms);
  line.pop_back();
  return line + buf;
}

std::int64_t steps_per_epoch(std::size_t num_clips, int batch_size) {
  require(num_clips > 0 && batch_size > 0, ErrorKind::InvalidInput, "steps_per_epoch needs clips and a batch size");
  return static_cast<std::int64_t>((num_clips + static_cast<std::size_t>(batch_size) - 1) /
                                   static_cast<std::size_t>(batch_size));
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%08lld.apnt", static_cast<long long>(step));
  return buf;
}

TrainResult train(const std::vector<dsp::Waveform>& corpus, const nn::ApnetConfig& model_cfg,
                  const TrainConfig& cfg, const loss::LossWeights& loss_weights, const TrainOptions& options) {
  model_cfg.validate();
  cfg.validate(model_cfg.stft.frame_shift);
  loss_weights.validate();
  require(!corpus.empty(), ErrorKind::InvalidInput, "training corpus is empty");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& c = corpus[i];
    require(!c.samples.empty(), ErrorKind::InvalidInput, "clip " + std::to_string(i) + " is empty");
    require(c.sample_rate == model_cfg.stft.sample_rate, ErrorKind::InvalidInput,
            "clip " + std::to_string(i) + " has sample rate " + std::to_string(c.sample_rate) + ", expected " +
                std::to_string(model_cfg.stft.sample_rate));
    require(c.all_finite(), ErrorKind::InvalidInput, "clip " + std::to_string(i) + " contains NaN or Inf");
  }

  const loss::LossSetup setup = loss::LossSetup::make(model_cfg.stft, model_cfg.mel);
  const std::int64_t spe = steps_per_epoch(corpus.size(), cfg.batch_size);
  std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * spe;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);

  TrainResult res;
  res.steps_per_epoch = spe;
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::int64_t step = 0;
  if (options.resume) {
    const io::Checkpoint& ck = *options.resume;
    const auto diff = io::config_differences(ck.config, model_cfg);
    if (!diff.empty()) {
      std::string list;
      for (const auto& d : diff) list += (list.empty() ? "" : ", ") + d;
      fail(ErrorKind::Config, "resume checkpoint configuration differs in: " + list);
    }
    res.weights = ck.weights;
    res.optimizer = ck.optimizer ? *ck.optimizer : OptimizerState::zeros_like(ck.weights);
    step = ck.step;
    if (!ck.rng_state.empty()) {
      std::istringstream is(ck.rng_state);
      is >> rng;
      require(!is.fail(), ErrorKind::Format, "resume checkpoint has a corrupt RNG state");
    }
  } else {
    res.weights = nn::init_weights(model_cfg, cfg.seed);
    res.optimizer = OptimizerState::zeros_like(res.weights);
  }

  const bool write = !options.out_dir.empty();
  std::ofstream log;
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "train_log.jsonl";
    log.open(log_path, options.resume ? std::ios::app : std::ios::trunc);
    require(static_cast<bool>(log), ErrorKind::Io, "cannot open '" + log_path.string() + "'");
  }

  auto snapshot = [&](std::int64_t at_step, const std::string& rng_state) {
    io::Checkpoint ck;
    ck.config = model_cfg;
    ck.weights = res.weights;
    ck.optimizer = res.optimizer;
    ck.train_config = cfg;
    ck.loss_weights = loss_weights;
    ck.step = at_step;
    ck.epoch = at_step / spe;
    ck.rng_state = rng_state;
    return ck;
  };
  auto rng_text = [&] {
    std::ostringstream os;
    os << rng;
    return os.str();
  };

  // Natural targets keyed by (clip, start); a short clip or full-length segment always hits.
  std::map<std::pair<std::size_t, std::size_t>, loss::NaturalTargets> cache;
  constexpr std::size_t kCacheLimit = 64;
  const auto seg = static_cast<std::size_t>(cfg.segment_samples);
  const auto shift = static_cast<std::size_t>(model_cfg.stft.frame_shift);
  std::uniform_int_distribution<std::size_t> pick_clip(0, corpus.size() - 1);

  while (step < total) {
    const std::string rng_before = rng_text();
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t epoch = step / spe;
    const double lr = lr_schedule(cfg, epoch);
    StepLog entry;
    try {
      ad::Graph<float> g;
      const nn::Bound bound = nn::bind_parameters(g, res.weights);
      ad::Var total_loss{};
      const double inv_batch = 1.0 / cfg.batch_size;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const std::size_t ci = pick_clip(rng);
        const std::size_t start = segment_start(corpus[ci].size(), seg, shift, rng);
        auto key = std::make_pair(ci, start);
        auto it = cache.find(key);
        if (it == cache.end()) {
          if (cache.size() >= kCacheLimit) cache.clear();
          it = cache.emplace(key, loss::natural_targets(cut(corpus[ci].samples, start, seg), setup)).first;
        }
        const loss::NaturalTargets& target = it->second;
        const nn::Prediction p = nn::forward(g, nn::mel_input(g, target.mel), bound, model_cfg);
        const auto gl = loss::generator_loss(g, p.log_amp, p.phase, target, setup, loss_weights);
        const ad::Var scaled = g.scale(gl.total, inv_batch);
        total_loss = b == 0 ? scaled : g.add(total_loss, scaled);
        accumulate(entry.report, gl.report(g), inv_batch);
      }
      res.weights.zero_grad();
      g.backward(total_loss);
      adamw_step(res.weights, res.optimizer, cfg, lr);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Numeric && write) {
        io::save_checkpoint(options.out_dir / "halt.apnt", snapshot(step, rng_before));
        fail(ErrorKind::Numeric, std::string(e.what()) + " (training halted at step " + std::to_string(step) +
                                     "; state saved to halt.apnt)");
      }
      throw;
    }
    ++step;
    entry.step = step;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (write) log << entry.to_json_line() << '\n' << std::flush;
    if (options.on_step) options.on_step(entry);
    res.history.push_back(entry);
    if (write && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
      io::save_checkpoint(options.out_dir / checkpoint_name(step), snapshot(step, rng_text()));
  }
  res.steps = step;
  if (write) {
    res.final_checkpoint = options.out_dir / "final.apnt";
    io::save_checkpoint(res.final_checkpoint, snapshot(step, rng_text()));
  }
  return res;
}

}  // namespace apnet::train

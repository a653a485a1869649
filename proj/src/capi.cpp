#include "apnet/apnet.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "apnet/app.hpp"
#include "apnet/error.hpp"
#include "json.hpp"

struct apnet_settings {
  apnet::config::Settings value;
};

struct apnet_model {
  apnet::io::Checkpoint ckpt;
};

namespace {

thread_local std::string last_error;

apnet_status status_of(apnet::ErrorKind k) {
  switch (k) {
    case apnet::ErrorKind::Usage:
    case apnet::ErrorKind::Config:
      return APNET_ERR_USAGE;
    case apnet::ErrorKind::Numeric:
      return APNET_ERR_NUMERIC;
    default:
      return APNET_ERR_DATA;
  }
}

template <typename F>
apnet_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return APNET_OK;
  } catch (const apnet::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    last_error = e.what();
    return APNET_ERR_DATA;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return APNET_ERR_DATA;
  } catch (const std::exception& e) {
    last_error = e.what();
    return APNET_ERR_DATA;
  }
}

template <typename P>
void need(const P* p, const char* name) {
  if (!p) apnet::fail(apnet::ErrorKind::Usage, std::string(name) + " must not be NULL");
}

apnet::config::Settings finalized(const apnet_settings* s) {
  need(s, "settings");
  apnet::config::Settings v = s->value;
  v.finalize();
  return v;
}

void copy_out(const std::string& text, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buf && cap > 0) {
    const size_t n = std::min(cap - 1, text.size());
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
  }
}

}  // namespace

extern "C" {

const char* apnet_version(void) { return "1.0.0"; }

const char* apnet_last_error(void) { return last_error.c_str(); }

apnet_status apnet_settings_new(apnet_settings** out) {
  return guarded([&] {
    need(out, "out");
    *out = new apnet_settings{};
  });
}

void apnet_settings_free(apnet_settings* s) { delete s; }

apnet_status apnet_settings_load(apnet_settings* s, const char* path) {
  return guarded([&] {
    need(s, "settings");
    need(path, "path");
    s->value = apnet::config::load(path);
  });
}

apnet_status apnet_settings_set(apnet_settings* s, const char* assignment) {
  return guarded([&] {
    need(s, "settings");
    need(assignment, "assignment");
    apnet::config::apply_override(s->value, assignment);
  });
}

apnet_status apnet_settings_validate(apnet_settings* s) {
  return guarded([&] { s->value = finalized(s); });
}

apnet_status apnet_settings_text(const apnet_settings* s, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(s, "settings");
    copy_out(apnet::config::to_text(s->value), buf, cap, needed);
  });
}

apnet_status apnet_analyze(const apnet_settings* s, const char* wav, const char* out_dir, size_t* frames) {
  return guarded([&] {
    need(wav, "wav");
    need(out_dir, "out_dir");
    const auto r = apnet::app::analyze(finalized(s), wav, out_dir);
    if (frames) *frames = r.frames;
  });
}

apnet_status apnet_copysynth(const apnet_settings* s, const char* input, const char* out_wav, size_t* samples,
                             double* snr_db, int* has_snr) {
  return guarded([&] {
    need(input, "input");
    need(out_wav, "out_wav");
    const auto r = apnet::app::copysynth(finalized(s), input, out_wav);
    if (samples) *samples = r.samples;
    if (has_snr) *has_snr = r.snr_db.has_value();
    if (snr_db) *snr_db = r.snr_db.value_or(0.0);
  });
}

apnet_status apnet_train(const apnet_settings* s, const char* corpus_dir, const char* out_dir, const char* resume,
                         apnet_line_fn on_step, apnet_line_fn on_epoch, void* user, long long* steps) {
  return guarded([&] {
    need(corpus_dir, "corpus_dir");
    need(out_dir, "out_dir");
    apnet::app::TrainCallbacks cb;
    if (on_step) cb.on_step = [&](const apnet::train::StepLog& l) { on_step(l.to_json_line().c_str(), user); };
    if (on_epoch) cb.on_epoch = [&](const apnet::app::EpochSummary& e) { on_epoch(e.to_json_line().c_str(), user); };
    std::optional<std::filesystem::path> from;
    if (resume) from = resume;
    const auto r = apnet::app::run_training(finalized(s), corpus_dir, out_dir, from, cb);
    if (steps) *steps = r.steps;
  });
}

apnet_status apnet_model_load(const char* path, apnet_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto m = std::make_unique<apnet_model>();
    m->ckpt = apnet::io::load_checkpoint(path);
    *out = m.release();
  });
}

void apnet_model_free(apnet_model* m) { delete m; }

apnet_status apnet_model_info(const apnet_model* m, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(m, "model");
    nlohmann::ordered_json j;
    j["config"] = nlohmann::json::parse(apnet::io::config_to_json(m->ckpt.config));
    j["step"] = m->ckpt.step;
    j["epoch"] = m->ckpt.epoch;
    j["parameters"] = m->ckpt.weights.parameter_count();
    j["has_optimizer"] = m->ckpt.optimizer.has_value();
    copy_out(j.dump(), buf, cap, needed);
  });
}

apnet_status apnet_synthesize(const apnet_model* m, const apnet_settings* s, const char* input, const char* out_wav,
                              size_t* frames, size_t* samples) {
  return guarded([&] {
    need(m, "model");
    need(input, "input");
    need(out_wav, "out_wav");
    const auto r = apnet::app::synthesize_file(m->ckpt, finalized(s), input, out_wav);
    if (frames) *frames = r.frames;
    if (samples) *samples = r.samples;
  });
}

apnet_status apnet_synthesize_mel(const apnet_model* m, const double* mel, size_t frames, size_t mel_dim,
                                  double* out, size_t out_cap, size_t* written) {
  return guarded([&] {
    need(m, "model");
    need(mel, "mel");
    need(out, "out");
    apnet::dsp::Matrix mm(frames, mel_dim);
    std::copy(mel, mel + frames * mel_dim, mm.data.begin());
    const auto y = apnet::nn::synthesize(mm, m->ckpt.weights, m->ckpt.config);
    if (y.size() > out_cap)
      apnet::fail(apnet::ErrorKind::Usage, "output buffer holds " + std::to_string(out_cap) + " samples, " +
                                               std::to_string(y.size()) + " needed");
    std::copy(y.samples.begin(), y.samples.end(), out);
    if (written) *written = y.size();
  });
}

apnet_status apnet_frame_level_check(const apnet_model* m, size_t frames, int* ok, size_t* max_extent,
                                     size_t* nodes_checked) {
  return guarded([&] {
    need(m, "model");
    const auto mels = apnet::app::synthetic_mels(m->ckpt.config, 1.0, 0);
    apnet::dsp::Matrix mel(frames, static_cast<size_t>(m->ckpt.config.mel_dim));
    for (size_t i = 0; i < mel.data.size(); ++i) mel.data[i] = mels.front().data[i % mels.front().data.size()];
    apnet::nn::FrameLevelReport r;
    apnet::nn::synthesize(mel, m->ckpt.weights, m->ckpt.config, 0, &r);
    if (ok) *ok = r.ok;
    if (max_extent) *max_extent = r.max_time_extent;
    if (nodes_checked) *nodes_checked = r.nodes_checked;
  });
}

apnet_status apnet_compare(const apnet_settings* s, const double* ref, const double* test, size_t n, double* snr_db,
                           double* las_rmse_db, double* mcd_db) {
  return guarded([&] {
    need(ref, "ref");
    need(test, "test");
    const auto cfg = finalized(s).model;
    const auto r = apnet::metrics::evaluate("", {ref, n}, {test, n}, cfg.stft, cfg.mel);
    if (snr_db) *snr_db = r.snr_db;
    if (las_rmse_db) *las_rmse_db = r.las_rmse_db;
    if (mcd_db) *mcd_db = r.mcd_db;
  });
}

apnet_status apnet_eval(const apnet_settings* s, const char* ref_dir, const char* syn_dir, const apnet_model* model,
                        int threads, const char* jsonl_path, apnet_line_fn on_row, apnet_line_fn on_warning,
                        void* user, size_t* evaluated, size_t* skipped) {
  return guarded([&] {
    need(ref_dir, "ref_dir");
    apnet::app::EvalOptions opt;
    opt.ref_dir = ref_dir;
    if (syn_dir) opt.syn_dir = syn_dir;
    opt.model = model ? &model->ckpt : nullptr;
    opt.threads = threads;
    if (on_warning) opt.on_warning = [&](const std::string& w) { on_warning(w.c_str(), user); };
    const auto r = apnet::app::evaluate(finalized(s), opt);
    if (on_row) {
      on_row(apnet::metrics::csv_header().c_str(), user);
      for (const auto& row : r.rows) on_row(apnet::metrics::csv_row(row).c_str(), user);
      on_row(apnet::metrics::csv_row(r.mean).c_str(), user);
    }
    if (jsonl_path) {
      std::ofstream out(jsonl_path, std::ios::trunc);
      if (!out) apnet::fail(apnet::ErrorKind::Io, std::string("cannot open '") + jsonl_path + "'");
      for (const auto& row : r.rows) out << apnet::metrics::json_line(row) << '\n';
      out << apnet::metrics::json_line(r.mean) << '\n';
      if (!out) apnet::fail(apnet::ErrorKind::Io, std::string("write failed for '") + jsonl_path + "'");
    }
    if (evaluated) *evaluated = r.rows.size();
    if (skipped) *skipped = r.skipped.size();
  });
}

apnet_status apnet_bench(const apnet_model* m, double seconds, const int* thread_counts, size_t count,
                         unsigned long long seed, double* rtf, double* wall_seconds) {
  return guarded([&] {
    need(m, "model");
    need(thread_counts, "thread_counts");
    const auto r = apnet::app::bench(m->ckpt, seconds, {thread_counts, thread_counts + count}, seed);
    for (size_t i = 0; i < r.size(); ++i) {
      if (rtf) rtf[i] = r[i].rtf;
      if (wall_seconds) wall_seconds[i] = r[i].wall_seconds;
    }
  });
}

}  // extern "C"

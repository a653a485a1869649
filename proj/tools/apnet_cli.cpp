#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "apnet/apnet.h"

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  long long seed = -1;
  int threads = 1;
  bool verbose = false;
};

int report(apnet_status st) {
  if (st != APNET_OK) std::fprintf(stderr, "apnet: error: %s\n", apnet_last_error());
  return static_cast<int>(st);
}

/// Fails with the status of the first unsuccessful call.
struct Failed {
  apnet_status status;
};

void check(apnet_status st) {
  if (st != APNET_OK) throw Failed{st};
}

class Settings {
 public:
  explicit Settings(const Globals& g) {
    check(apnet_settings_new(&s_));
    if (!g.config.empty()) check(apnet_settings_load(s_, g.config.c_str()));
    for (const auto& a : g.sets) check(apnet_settings_set(s_, a.c_str()));
    if (g.seed >= 0) check(apnet_settings_set(s_, ("train.seed=" + std::to_string(g.seed)).c_str()));
    check(apnet_settings_validate(s_));
  }
  ~Settings() { apnet_settings_free(s_); }
  Settings(const Settings&) = delete;
  Settings& operator=(const Settings&) = delete;
  apnet_settings* get() const { return s_; }
  void set(const std::string& a) { check(apnet_settings_set(s_, a.c_str())); }

 private:
  apnet_settings* s_ = nullptr;
};

class Model {
 public:
  explicit Model(const std::string& path) { check(apnet_model_load(path.c_str(), &m_)); }
  ~Model() { apnet_model_free(m_); }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  const apnet_model* get() const { return m_; }

 private:
  apnet_model* m_ = nullptr;
};

void print_line(const char* line, void* user) {
  std::fprintf(static_cast<FILE*>(user), "%s\n", line);
  std::fflush(static_cast<FILE*>(user));
}

void print_epoch(const char* line, void*) {
  std::printf("epoch %s\n", line);
  std::fflush(stdout);
}

void print_warning(const char* line, void*) { std::fprintf(stderr, "apnet: warning: %s\n", line); }

template <typename F>
std::string fetch_text(F fn) {
  size_t needed = 0;
  check(fn(nullptr, 0, &needed));
  std::string buf(needed, '\0');
  check(fn(buf.data(), buf.size(), &needed));
  buf.resize(needed - 1);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"APNet vocoder: analysis, copy synthesis, training, synthesis, evaluation and benchmarking"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "settings file ([section] key = value)")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "override one setting, section.key=value (repeatable)");
  app.add_option("--seed", g.seed, "training and benchmark seed")->check(CLI::NonNegativeNumber);
  app.add_option("--threads", g.threads, "worker threads for eval and the largest bench thread count")
      ->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "print per-step training logs and extra detail");

  std::string in, out, ckpt, syn, ref, csv, jsonl, resume;
  long long epochs = -1, max_steps = -1;
  double seconds = 10.0;
  std::vector<int> thread_counts;

  auto* analyze = app.add_subcommand("analyze", "write mel.apf, logamp.apf and phase.apf for a WAV");
  analyze->add_option("input", in, "mono 16-bit PCM WAV")->required()->check(CLI::ExistingFile);
  analyze->add_option("out_dir", out, "output directory")->required();

  auto* copysynth = app.add_subcommand("copysynth", "resynthesize from natural amplitude and phase");
  copysynth->add_option("input", in, "WAV or a directory written by analyze")->required()->check(CLI::ExistingPath);
  copysynth->add_option("output", out, "output WAV")->required();

  auto* train = app.add_subcommand("train", "train on every WAV of a directory");
  train->add_option("corpus_dir", in, "directory of WAV clips")->required()->check(CLI::ExistingDirectory);
  train->add_option("out_dir", out, "checkpoints and train_log.jsonl")->required();
  train->add_option("--epochs", epochs, "override train.epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--max-steps", max_steps, "override train.max_steps (0: no cap)")->check(CLI::NonNegativeNumber);
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synthesize", "vocode a mel .apf or a WAV's mel with a checkpoint");
  synth->add_option("input", in, "mel .apf or WAV")->required()->check(CLI::ExistingFile);
  synth->add_option("checkpoint", ckpt, ".apnt checkpoint")->required()->check(CLI::ExistingFile);
  synth->add_option("output", out, "output WAV")->required();

  auto* eval = app.add_subcommand("eval", "objective metrics against reference WAVs, paired by file stem");
  eval->add_option("ref_dir", ref, "reference WAV directory")->required()->check(CLI::ExistingDirectory);
  auto* syn_opt = eval->add_option("--syn", syn, "directory of synthesized WAVs")->check(CLI::ExistingDirectory);
  auto* ck_opt = eval->add_option("--checkpoint", ckpt, "synthesize from each reference's mel")
                     ->check(CLI::ExistingFile);
  syn_opt->excludes(ck_opt);
  eval->add_option("--out", csv, "CSV file (default: stdout)");
  eval->add_option("--jsonl", jsonl, "also write JSON lines");

  auto* bench = app.add_subcommand("bench", "real-time factor on synthetic mel input");
  bench->add_option("checkpoint", ckpt, ".apnt checkpoint")->required()->check(CLI::ExistingFile);
  bench->add_option("--seconds", seconds, "audio duration to synthesize")->check(CLI::PositiveNumber);
  bench->add_option("--thread-counts", thread_counts, "thread counts to measure (default: 1 up to --threads)")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);

  auto* info = app.add_subcommand("info", "print a checkpoint's configuration as JSON");
  info->add_option("checkpoint", ckpt, ".apnt checkpoint")->required()->check(CLI::ExistingFile);

  app.add_subcommand("config", "print the effective settings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*analyze) {
      Settings s(g);
      size_t frames = 0;
      check(apnet_analyze(s.get(), in.c_str(), out.c_str(), &frames));
      std::printf("frames %zu\n", frames);
    } else if (*copysynth) {
      Settings s(g);
      size_t samples = 0;
      double snr = 0;
      int has_snr = 0;
      check(apnet_copysynth(s.get(), in.c_str(), out.c_str(), &samples, &snr, &has_snr));
      std::printf("samples %zu\n", samples);
      if (has_snr) std::printf("snr_db %.3f\n", snr);
    } else if (*train) {
      Settings s(g);
      if (epochs >= 0) s.set("train.epochs=" + std::to_string(epochs));
      if (max_steps >= 0) s.set("train.max_steps=" + std::to_string(max_steps));
      check(apnet_settings_validate(s.get()));
      long long steps = 0;
      check(apnet_train(s.get(), in.c_str(), out.c_str(), resume.empty() ? nullptr : resume.c_str(),
                        g.verbose ? print_line : nullptr, print_epoch, stdout, &steps));
      std::printf("steps %lld\n", steps);
      std::printf("checkpoint %s\n", (std::filesystem::path(out) / "final.apnt").string().c_str());
    } else if (*synth) {
      Settings s(g);
      Model m(ckpt);
      size_t frames = 0, samples = 0;
      check(apnet_synthesize(m.get(), s.get(), in.c_str(), out.c_str(), &frames, &samples));
      std::printf("frames %zu\nsamples %zu\n", frames, samples);
    } else if (*eval) {
      if (syn.empty() == ckpt.empty()) {
        std::fprintf(stderr, "apnet: error: eval needs exactly one of --syn or --checkpoint\n");
        return 1;
      }
      Settings s(g);
      std::unique_ptr<Model> m;
      if (!ckpt.empty()) m = std::make_unique<Model>(ckpt);
      FILE* sink = stdout;
      if (!csv.empty()) {
        sink = std::fopen(csv.c_str(), "w");
        if (!sink) {
          std::fprintf(stderr, "apnet: error: cannot open '%s'\n", csv.c_str());
          return 2;
        }
      }
      size_t evaluated = 0, skipped = 0;
      const apnet_status st =
          apnet_eval(s.get(), ref.c_str(), syn.empty() ? nullptr : syn.c_str(), m ? m->get() : nullptr, g.threads,
                     jsonl.empty() ? nullptr : jsonl.c_str(), print_line, print_warning, sink, &evaluated, &skipped);
      if (sink != stdout) std::fclose(sink);
      check(st);
      std::fprintf(stderr, "evaluated %zu, skipped %zu (warnings: %zu)\n", evaluated, skipped, skipped);
    } else if (*bench) {
      Model m(ckpt);
      if (thread_counts.empty()) {
        for (int t = 1; t < g.threads; t *= 2) thread_counts.push_back(t);
        thread_counts.push_back(g.threads);
      }
      std::vector<double> rtf(thread_counts.size()), wall(thread_counts.size());
      check(apnet_bench(m.get(), seconds, thread_counts.data(), thread_counts.size(),
                        static_cast<unsigned long long>(g.seed >= 0 ? g.seed : 0), rtf.data(), wall.data()));
      std::printf("threads,seconds,wall_seconds,rtf\n");
      for (size_t i = 0; i < rtf.size(); ++i)
        std::printf("%d,%.3f,%.6f,%.6f\n", thread_counts[i], seconds, wall[i], rtf[i]);
    } else if (*info) {
      Model m(ckpt);
      const std::string text =
          fetch_text([&](char* b, size_t c, size_t* n) { return apnet_model_info(m.get(), b, c, n); });
      std::printf("%s\n", text.c_str());
    } else {
      Settings s(g);
      const std::string text =
          fetch_text([&](char* b, size_t c, size_t* n) { return apnet_settings_text(s.get(), b, c, n); });
      std::printf("%s", text.c_str());
    }
  } catch (const Failed& f) {
    return report(f.status);
  }
  return 0;
}

#pragma once

// File-level workflows behind the command line: analysis, copy synthesis,
// training, synthesis, evaluation and benchmarking.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "apnet/checkpoint.hpp"
#include "apnet/config.hpp"
#include "apnet/metrics.hpp"

namespace apnet::app {

namespace fs = std::filesystem;

using MessageFn = std::function<void(const std::string&)>;

struct AnalyzeResult {
  std::size_t frames = 0;
  std::vector<fs::path> files;  // mel.apf, logamp.apf, phase.apf
};

/// Writes natural mel, log-amplitude and phase features of one WAV into out_dir.
AnalyzeResult analyze(const config::Settings& s, const fs::path& wav, const fs::path& out_dir);

struct CopySynthResult {
  std::size_t samples = 0;
  std::optional<double> snr_db;  // against the input WAV, when the input is a WAV
};

/// Natural log-amplitude and phase, held at ".apf" precision, back through the ISTFT.
/// `input` is a WAV or a directory written by analyze().
CopySynthResult copysynth(const config::Settings& s, const fs::path& input, const fs::path& out_wav);

/// Sorted *.wav files of a directory.
std::vector<fs::path> list_wavs(const fs::path& dir);

struct EpochSummary {
  std::int64_t epoch = 0;
  std::int64_t steps = 0;
  double lr = 0;
  loss::LossReport median;

  std::string to_json_line() const;
};

struct TrainCallbacks {
  std::function<void(const train::StepLog&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
};

/// Trains on every WAV of corpus_dir; resume continues from a checkpoint written by a previous run.
train::TrainResult run_training(const config::Settings& s, const fs::path& corpus_dir, const fs::path& out_dir,
                                const std::optional<fs::path>& resume, const TrainCallbacks& callbacks = {});

/// Throws Config listing every feature-relevant field (stft.*, mel.*) where the two configurations differ.
void require_feature_match(const nn::ApnetConfig& checkpoint_cfg, const nn::ApnetConfig& requested,
                           const std::string& what);

struct SynthesizeResult {
  std::size_t frames = 0;
  std::size_t samples = 0;
};

/// `input` is a mel ".apf" or a WAV (its mel is extracted first). Uses the checkpoint configuration.
SynthesizeResult synthesize_file(const io::Checkpoint& ckpt, const config::Settings& s, const fs::path& input,
                                 const fs::path& out_wav);

struct EvalOptions {
  fs::path ref_dir;
  std::optional<fs::path> syn_dir;        // compare against existing files
  const io::Checkpoint* model = nullptr;  // or synthesize from the reference mel
  int threads = 1;
  MessageFn on_warning;
};

struct EvalSummary {
  std::vector<metrics::EvalReport> rows;
  metrics::EvalReport mean;
  std::vector<std::string> skipped;
};

EvalSummary evaluate(const config::Settings& s, const EvalOptions& options);

/// Deterministic mel input of the given duration split into utterances of at most one second.
std::vector<dsp::Matrix> synthetic_mels(const nn::ApnetConfig& cfg, double seconds, std::uint64_t seed);

std::vector<metrics::RtfResult> bench(const io::Checkpoint& ckpt, double seconds, const std::vector<int>& threads,
                                      std::uint64_t seed);

}  // namespace apnet::app

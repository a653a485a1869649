#pragma once

// Deterministic generator-only training: segment sampling, AdamW with
// per-epoch exponential learning-rate decay, JSON-lines logging and
// periodic checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "apnet/losses.hpp"
#include "apnet/model.hpp"

namespace apnet::io {
struct Checkpoint;
}

namespace apnet::train {

struct TrainConfig {
  double learning_rate = 2e-4;
  double lr_decay = 0.999;  // per epoch
  double beta1 = 0.8;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 2;
  int segment_samples = 8000;
  int epochs = 100;
  std::int64_t max_steps = 0;  // 0: no cap beyond epochs
  std::uint64_t seed = 1234;
  int checkpoint_every = 100;  // steps; 0 disables periodic checkpoints

  void validate(int frame_shift) const;
  bool operator==(const TrainConfig&) const = default;
};

struct OptimizerState {
  std::map<std::string, ad::DiffTensor<float>> m;
  std::map<std::string, ad::DiffTensor<float>> v;
  std::int64_t step = 0;

  /// Zero moments mirroring every weight tensor.
  static OptimizerState zeros_like(const nn::ModelWeights<float>& w);
};

/// One decoupled-weight-decay Adam update from the gradients stored in `w`.
/// Every gradient is checked before any weight changes; a non-finite one throws
/// a numeric error naming the tensor.
void adamw_step(nn::ModelWeights<float>& w, OptimizerState& state, const TrainConfig& cfg, double lr);

double lr_schedule(const TrainConfig& cfg, std::int64_t epoch);

/// Uniform frame-aligned start in [0, clip_len - segment]; 0 when the clip is too short.
std::size_t segment_start(std::size_t clip_len, std::size_t segment, std::size_t frame_shift, std::mt19937_64& rng);

struct Segment {
  dsp::Waveform wave;  // exactly segment_samples long (zero-padded short clips)
  dsp::Matrix mel;     // frames x num_mels
  std::size_t start = 0;
};

Segment sample_segment(const dsp::Waveform& clip, int segment_samples, const loss::LossSetup& setup,
                       std::mt19937_64& rng);

struct StepLog {
  std::int64_t step = 0;  // updates applied so far, including this one
  std::int64_t epoch = 0;
  double lr = 0.0;
  double wall_ms = 0.0;
  loss::LossReport report;

  std::string to_json_line() const;
};

struct TrainOptions {
  std::filesystem::path out_dir;          // empty: no files written
  const io::Checkpoint* resume = nullptr;  // continue from this state
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  std::int64_t steps = 0;
  std::int64_t steps_per_epoch = 0;
  nn::ModelWeights<float> weights;
  OptimizerState optimizer;
  std::vector<StepLog> history;
  std::filesystem::path final_checkpoint;
};

std::int64_t steps_per_epoch(std::size_t num_clips, int batch_size);
std::string checkpoint_name(std::int64_t step);

/// Files under out_dir: train_log.jsonl, step_XXXXXXXX.apnt every checkpoint_every steps,
/// final.apnt at the end, halt.apnt before rethrowing a numeric error.
TrainResult train(const std::vector<dsp::Waveform>& corpus, const nn::ApnetConfig& model_cfg,
                  const TrainConfig& cfg, const loss::LossWeights& weights, const TrainOptions& options = {});

}  // namespace apnet::train

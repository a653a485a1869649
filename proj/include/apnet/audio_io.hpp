#pragma once

// WAV (RIFF PCM16 mono) and ".apf" feature files. ".apf" is "APF1", a u32
// length-prefixed JSON header {rows, cols, kind, sample_rate, frame_shift},
// then rows x cols little-endian f32 values, row-major.

#include <filesystem>
#include <string>

#include "apnet/dsp.hpp"

namespace apnet::io {

/// Reads a mono 16-bit PCM WAV. A positive expected_rate rejects any other rate.
/// Malformed or unsupported files raise InvalidInput/Format errors that name the problem.
dsp::Waveform read_wav(const std::filesystem::path& path, int expected_rate = 0);

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1] and rounded to the nearest step.
void write_wav(const std::filesystem::path& path, const dsp::Waveform& w);

/// Quantizes samples exactly as write_wav followed by read_wav would.
std::vector<double> quantize_pcm16(const std::vector<double>& samples);

enum class FeatureKind { Mel, LogAmp, Phase, Real, Imag };

const char* feature_kind_name(FeatureKind k);
FeatureKind feature_kind_from(const std::string& name);

struct FeatureFile {
  FeatureKind kind = FeatureKind::Mel;
  int sample_rate = 16000;
  int frame_shift = 80;
  dsp::Matrix data;  // frames x cols
};

void write_features(const std::filesystem::path& path, const FeatureFile& f);
FeatureFile read_features(const std::filesystem::path& path);

/// Rounds every element through 32-bit float, the precision ".apf" stores.
dsp::Matrix to_f32_precision(dsp::Matrix m);

}  // namespace apnet::io

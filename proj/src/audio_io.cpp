#include "apnet/audio_io.hpp"

#include <algorithm>
#include <cmath>

#include "apnet/error.hpp"
#include "binary_io.hpp"
#include "json.hpp"

namespace apnet::io {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::int16_t to_pcm16(double v) {
  const double s = std::round(std::clamp(v, -1.0, 1.0) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(s, -32768.0, 32767.0));
}

}  // namespace

dsp::Waveform read_wav(const std::filesystem::path& path, int expected_rate) {
  auto r = detail::Reader::from_file(path);
  const std::string where = "WAV '" + path.string() + "'";
  if (r.remaining() < 12 || r.fourcc() != "RIFF") fail(ErrorKind::Format, where + ": not a RIFF file");
  r.u32();
  if (r.fourcc() != "WAVE") fail(ErrorKind::Format, where + ": RIFF type is not WAVE");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (r.remaining() >= 8) {
    const std::string id = r.fourcc();
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) fail(ErrorKind::Format, where + ": fmt chunk too short");
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      std::uint32_t rest = size - 16;
      if (format == kFormatExtensible && rest >= 10) {
        r.skip(8);  // cbSize, valid bits, channel mask
        format = r.u16();
        rest -= 10;
      }
      r.skip(rest + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail(ErrorKind::Format, where + ": data chunk before fmt chunk");
      if (format != kFormatPcm)
        fail(ErrorKind::InvalidInput, where + ": unsupported encoding (format tag " + std::to_string(format) +
                                          "), only 16-bit PCM is accepted");
      if (channels != 1)
        fail(ErrorKind::InvalidInput, where + ": has " + std::to_string(channels) +
                                          " channels, only mono is accepted");
      if (bits != 16)
        fail(ErrorKind::InvalidInput, where + ": has " + std::to_string(bits) +
                                          "-bit samples, only 16-bit PCM is accepted");
      if (expected_rate > 0 && rate != static_cast<std::uint32_t>(expected_rate))
        fail(ErrorKind::InvalidInput, where + ": sample rate " + std::to_string(rate) + " Hz, configuration requires " +
                                          std::to_string(expected_rate) + " Hz (no resampling is performed)");
      if (size > r.remaining()) fail(ErrorKind::Format, where + ": data chunk is truncated");
      if (size % 2) fail(ErrorKind::Format, where + ": data chunk has an odd byte count");
      dsp::Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(size / 2);
      for (double& s : w.samples) s = static_cast<std::int16_t>(r.u16()) / 32768.0;
      return w;
    } else {
      r.skip(std::min<std::size_t>(size + (size & 1), r.remaining()));
    }
  }
  fail(ErrorKind::Format, where + (have_fmt ? ": no data chunk" : ": no fmt chunk"));
}

void write_wav(const std::filesystem::path& path, const dsp::Waveform& w) {
  require(w.sample_rate > 0, ErrorKind::InvalidInput, "write_wav: sample rate must be positive");
  require(w.all_finite(), ErrorKind::Numeric, "write_wav: waveform contains non-finite samples");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  detail::Writer out;
  out.bytes("RIFF", 4);
  out.u32(36 + data_bytes);
  out.bytes("WAVE", 4);
  out.bytes("fmt ", 4);
  out.u32(16);
  out.u16(kFormatPcm);
  out.u16(1);
  out.u32(static_cast<std::uint32_t>(w.sample_rate));
  out.u32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  out.u16(2);
  out.u16(16);
  out.bytes("data", 4);
  out.u32(data_bytes);
  for (double s : w.samples) out.u16(static_cast<std::uint16_t>(to_pcm16(s)));
  out.save(path);
}

std::vector<double> quantize_pcm16(const std::vector<double>& samples) {
  std::vector<double> q(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) q[i] = to_pcm16(samples[i]) / 32768.0;
  return q;
}

const char* feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::Mel: return "mel";
    case FeatureKind::LogAmp: return "logamp";
    case FeatureKind::Phase: return "phase";
    case FeatureKind::Real: return "real";
    case FeatureKind::Imag: return "imag";
  }
  return "?";
}

FeatureKind feature_kind_from(const std::string& name) {
  for (FeatureKind k : {FeatureKind::Mel, FeatureKind::LogAmp, FeatureKind::Phase, FeatureKind::Real, FeatureKind::Imag})
    if (name == feature_kind_name(k)) return k;
  fail(ErrorKind::Format, "unknown feature kind '" + name + "'");
}

void write_features(const std::filesystem::path& path, const FeatureFile& f) {
  require(f.data.data.size() == f.data.rows * f.data.cols, ErrorKind::InvalidInput, "write_features: bad matrix");
  const nlohmann::ordered_json header = {{"rows", f.data.rows},
                                         {"cols", f.data.cols},
                                         {"kind", feature_kind_name(f.kind)},
                                         {"sample_rate", f.sample_rate},
                                         {"frame_shift", f.frame_shift}};
  detail::Writer w;
  w.bytes("APF1", 4);
  w.str(header.dump());
  for (double v : f.data.data) w.f32(static_cast<float>(v));
  w.save(path);
}

FeatureFile read_features(const std::filesystem::path& path) {
  auto r = detail::Reader::from_file(path);
  const std::string where = "feature file '" + path.string() + "'";
  if (r.remaining() < 4 || r.fourcc() != "APF1") fail(ErrorKind::Format, where + ": not an APF1 file");
  FeatureFile f;
  std::size_t rows = 0, cols = 0;
  try {
    const auto header = nlohmann::json::parse(r.str(1u << 20));
    rows = header.at("rows").get<std::size_t>();
    cols = header.at("cols").get<std::size_t>();
    f.kind = feature_kind_from(header.at("kind").get<std::string>());
    f.sample_rate = header.at("sample_rate").get<int>();
    f.frame_shift = header.at("frame_shift").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, where + ": bad header: " + e.what());
  }
  if (cols == 0 || rows > r.remaining() / 4 / cols || rows * cols * 4 != r.remaining())
    fail(ErrorKind::Format, where + ": payload holds " + std::to_string(r.remaining()) + " bytes, header declares " +
                                std::to_string(rows) + "x" + std::to_string(cols) + " floats");
  f.data = dsp::Matrix(rows, cols);
  for (double& v : f.data.data) {
    v = r.f32();
    if (!std::isfinite(v)) fail(ErrorKind::Format, where + ": non-finite value");
  }
  return f;
}

dsp::Matrix to_f32_precision(dsp::Matrix m) {
  for (double& v : m.data) v = static_cast<float>(v);
  return m;
}

}  // namespace apnet::io

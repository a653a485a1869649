#pragma once

// Standalone RIFF writer/reader for tests that only see the C API or the CLI.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace testutil {

inline void write_pcm16(const std::filesystem::path& p, const std::vector<double>& x, int rate = 16000,
                        int channels = 1) {
  auto put = [](std::string& b, std::uint32_t v, int n) {
    for (int i = 0; i < n; ++i) b += static_cast<char>((v >> (8 * i)) & 0xFF);
  };
  std::string b = "RIFF";
  const auto data = static_cast<std::uint32_t>(x.size() * 2);
  put(b, 36 + data, 4);
  b += "WAVEfmt ";
  put(b, 16, 4);
  put(b, 1, 2);
  put(b, static_cast<std::uint32_t>(channels), 2);
  put(b, static_cast<std::uint32_t>(rate), 4);
  put(b, static_cast<std::uint32_t>(rate * channels * 2), 4);
  put(b, static_cast<std::uint32_t>(channels * 2), 2);
  put(b, 16, 2);
  b += "data";
  put(b, data, 4);
  for (double v : x) {
    const long s = std::lround(std::fmax(-32768.0, std::fmin(32767.0, v * 32768.0)));
    put(b, static_cast<std::uint32_t>(static_cast<std::uint16_t>(static_cast<std::int16_t>(s))), 2);
  }
  std::ofstream(p, std::ios::binary | std::ios::trunc).write(b.data(), static_cast<std::streamsize>(b.size()));
}

/// Samples of a canonical 44-byte-header PCM16 mono file.
inline std::vector<double> read_pcm16(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<double> x;
  for (std::size_t i = 44; i + 1 < b.size(); i += 2) {
    const auto lo = static_cast<unsigned char>(b[i]);
    const auto hi = static_cast<unsigned char>(b[i + 1]);
    x.push_back(static_cast<std::int16_t>(lo | (hi << 8)) / 32768.0);
  }
  return x;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Harmonic test clip: a few partials with a slow envelope.
inline std::vector<double> harmonic_clip(std::size_t n, int rate = 16000, double f0 = 150.0) {
  std::vector<double> x(n);
  const double pi = 3.14159265358979323846;
  for (std::size_t t = 0; t < n; ++t) {
    const double time = static_cast<double>(t) / rate;
    double s = 0;
    for (int k = 1; k <= 6; ++k) s += std::sin(2 * pi * f0 * k * time + 0.4 * k) / k;
    x[t] = 0.25 * (0.7 + 0.3 * std::sin(2 * pi * 2.0 * time)) * s;
  }
  return x;
}

}  // namespace testutil

#include "apnet/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <vector>

#include "apnet/error.hpp"

namespace apnet::dsp {
namespace {

struct Plans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

// FFTW's planner is not thread-safe; execution with the new-array API is.
const Plans& plans_for(int n) {
  static std::mutex mutex;
  static std::map<int, Plans> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  double* buf = fftw_alloc_real(static_cast<std::size_t>(n));
  fftw_complex* spec = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
  Plans p;
  p.forward = fftw_plan_dft_r2c_1d(n, buf, spec, flags);
  p.inverse = fftw_plan_dft_c2r_1d(n, spec, buf, flags);
  fftw_free(buf);
  fftw_free(spec);
  require(p.forward && p.inverse, ErrorKind::Config, "fft: planner failed for size " + std::to_string(n));
  return cache.emplace(n, p).first->second;
}

}  // namespace

void rfft(std::span<const double> in, std::span<std::complex<double>> out) {
  const int n = static_cast<int>(in.size());
  require(n > 0 && out.size() == static_cast<std::size_t>(n / 2 + 1), ErrorKind::InvalidInput,
          "rfft: output must hold N/2+1 bins");
  const Plans& p = plans_for(n);
  // r2c does not modify its input; the const_cast only satisfies the C signature.
  fftw_execute_dft_r2c(p.forward, const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

void irfft_unnormalized(std::span<const std::complex<double>> in, std::span<double> out) {
  const int n = static_cast<int>(out.size());
  require(n > 0 && in.size() == static_cast<std::size_t>(n / 2 + 1), ErrorKind::InvalidInput,
          "irfft: input must hold N/2+1 bins");
  const Plans& p = plans_for(n);
  // c2r overwrites its input.
  thread_local std::vector<std::complex<double>> scratch;
  scratch.assign(in.begin(), in.end());
  scratch.front().imag(0.0);
  if (n % 2 == 0) scratch.back().imag(0.0);
  fftw_execute_dft_c2r(p.inverse, reinterpret_cast<fftw_complex*>(scratch.data()), out.data());
}

}  // namespace apnet::dsp

#pragma once

#include <complex>
#include <span>

namespace apnet::dsp {

/// Forward real DFT: out[k] = sum_n in[n] e^{-2 pi i k n / N}, k = 0..N/2. in.size() == N.
void rfft(std::span<const double> in, std::span<std::complex<double>> out);

/// Unnormalised Hermitian inverse: out[n] = sum_{k=0}^{N-1} X_k e^{2 pi i k n / N} where X is
/// the Hermitian extension of in (imag parts of DC and Nyquist ignored). out.size() == N.
void irfft_unnormalized(std::span<const std::complex<double>> in, std::span<double> out);

}  // namespace apnet::dsp

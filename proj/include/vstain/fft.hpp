#pragma once

#include <complex>
#include <span>
#include <vector>

namespace vstain::fft {

using Complex = std::complex<double>;

/// In-place 1-D DFT. Forward uses exp(-i...) and is unnormalized; inverse uses
/// exp(+i...) and divides by the length. Radix-2 for power-of-two lengths,
/// direct summation otherwise.
void transform(std::span<Complex> data, bool inverse);

/// In-place 2-D DFT over a row-major rows x cols grid, same conventions.
void transform2d(std::span<Complex> data, int rows, int cols, bool inverse);

/// O(N^2) reference DFT, kept for testing the fast path.
std::vector<Complex> naive_dft(std::span<const Complex> data, bool inverse);

}  // namespace vstain::fft

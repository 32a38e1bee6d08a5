#include "vstain/fft.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace vstain::fft {

namespace {

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

void radix2(std::span<Complex> a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const Complex wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            Complex w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const Complex u = a[i + k];
                const Complex v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

}  // namespace

std::vector<Complex> naive_dft(std::span<const Complex> data, bool inverse) {
    const std::size_t n = data.size();
    std::vector<Complex> out(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k = 0; k < n; ++k) {
        Complex acc(0.0, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            // reduce the phase index first to keep the angle small
            const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) /
                               static_cast<double>(n);
            acc += data[j] * Complex(std::cos(ang), std::sin(ang));
        }
        out[k] = inverse ? acc / static_cast<double>(n) : acc;
    }
    return out;
}

void transform(std::span<Complex> data, bool inverse) {
    const std::size_t n = data.size();
    if (n <= 1) return;
    if (is_pow2(n)) {
        radix2(data, inverse);
        if (inverse)
            for (auto& v : data) v /= static_cast<double>(n);
        return;
    }
    auto out = naive_dft(data, inverse);
    std::copy(out.begin(), out.end(), data.begin());
}

void transform2d(std::span<Complex> data, int rows, int cols, bool inverse) {
    if (rows <= 0 || cols <= 0 || data.size() != static_cast<std::size_t>(rows) * cols)
        throw std::invalid_argument("fft::transform2d: size mismatch");
    for (int r = 0; r < rows; ++r)
        transform(data.subspan(static_cast<std::size_t>(r) * cols, cols), inverse);
    std::vector<Complex> column(rows);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) column[r] = data[static_cast<std::size_t>(r) * cols + c];
        transform(column, inverse);
        for (int r = 0; r < rows; ++r) data[static_cast<std::size_t>(r) * cols + c] = column[r];
    }
}

}  // namespace vstain::fft

#pragma once

// Discrete Fourier transform for arbitrary N: iterative radix-2 for powers
// of two, Bluestein's chirp-z reduction otherwise.

#include <complex>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace dsm::dsp {

using cplx = std::complex<double>;

namespace detail {

inline bool is_pow2(std::size_t n) noexcept { return n && !(n & (n - 1)); }

inline std::size_t next_pow2(std::size_t n) noexcept {
  std::size_t p = 1;
  while (p < n)
    p <<= 1;
  return p;
}

/// In-place radix-2 transform; sign = -1 forward, +1 inverse (unscaled).
inline void fft_pow2(std::vector<cplx> &a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1)
      j ^= bit;
    j ^= bit;
    if (i < j)
      std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    std::vector<cplx> tw(half);
    for (std::size_t k = 0; k < half; ++k) {
      double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) /
                   static_cast<double>(len);
      tw[k] = {std::cos(ang), std::sin(ang)};
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        cplx u = a[i + k];
        cplx v = a[i + k + half] * tw[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

inline std::vector<cplx> bluestein(std::span<const cplx> x) {
  const std::size_t n = x.size();
  const std::size_t m = next_pow2(2 * n - 1);
  // chirp[k] = exp(-i*pi*k^2/n); k^2 reduced mod 2n keeps the angle small.
  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % (2 * n);
    double ang = -std::numbers::pi * static_cast<double>(k2) /
                 static_cast<double>(n);
    chirp[k] = {std::cos(ang), std::sin(ang)};
  }
  std::vector<cplx> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k)
    a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k)
    b[k] = b[m - k] = std::conj(chirp[k]);
  fft_pow2(a, -1);
  fft_pow2(b, -1);
  for (std::size_t i = 0; i < m; ++i)
    a[i] *= b[i];
  fft_pow2(a, +1);
  std::vector<cplx> out(n);
  const double scale = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k)
    out[k] = a[k] * scale * chirp[k];
  return out;
}

} // namespace detail

/// Forward DFT X[k] = sum_n x[n] exp(-2*pi*i*k*n/N).
inline std::vector<cplx> dft(std::span<const cplx> x) {
  if (x.empty())
    return {};
  if (detail::is_pow2(x.size())) {
    std::vector<cplx> a(x.begin(), x.end());
    detail::fft_pow2(a, -1);
    return a;
  }
  return detail::bluestein(x);
}

inline std::vector<cplx> dft(std::span<const double> x) {
  std::vector<cplx> c(x.begin(), x.end());
  return dft(std::span<const cplx>(c));
}

/// Periodic Hann taper.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  return w;
}

} // namespace dsm::dsp

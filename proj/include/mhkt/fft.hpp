#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

namespace mhkt {

/// In-place radix-2 Cooley-Tukey transform. n must be a power of two.
/// inverse=true applies the conjugate transform and the 1/n scale.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw std::invalid_argument("fft: size must be a power of two");

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

/// 2-D inverse DFT of a row-major rows x cols grid (both powers of two).
inline void ifft2_inplace(std::vector<std::complex<double>>& grid, std::size_t rows, std::size_t cols) {
  if (grid.size() != rows * cols) throw std::invalid_argument("ifft2: bad grid size");
  std::vector<std::complex<double>> buf(std::max(rows, cols));
  for (std::size_t r = 0; r < rows; ++r) {
    buf.assign(grid.begin() + r * cols, grid.begin() + (r + 1) * cols);
    fft_inplace(buf, true);
    std::copy(buf.begin(), buf.end(), grid.begin() + r * cols);
  }
  for (std::size_t c = 0; c < cols; ++c) {
    buf.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) buf[r] = grid[r * cols + c];
    fft_inplace(buf, true);
    for (std::size_t r = 0; r < rows; ++r) grid[r * cols + c] = buf[r];
  }
}

}  // namespace mhkt

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace mhkt {

/// Unnormalized sinc: sin(t)/t with sinc(0) = 1.
inline double sinc(double t) {
  if (std::abs(t) < 1e-12) return 1.0;
  return std::sin(t) / t;
}

/// Numerically stable softplus log(1 + exp(x)).
template <class S>
S softplus(S x) {
  const S zero = S(0);
  return std::max(x, zero) + std::log1p(std::exp(-std::abs(x)));
}

/// d softplus / dx = logistic sigmoid.
template <class S>
S sigmoid(S x) {
  if (x >= S(0)) {
    const S e = std::exp(-x);
    return S(1) / (S(1) + e);
  }
  const S e = std::exp(x);
  return e / (S(1) + e);
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) {
    if (p > (SIZE_MAX >> 1)) throw std::overflow_error("next_pow2 overflow");
    p <<= 1;
  }
  return p;
}

}  // namespace mhkt

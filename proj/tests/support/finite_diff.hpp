#pragma once

// Central-difference gradient oracle, independent of the backward passes it
// checks: it only moves parameter values through the registry and re-runs
// the provided loss closure.

#include <Eigen/Dense>
#include <cmath>
#include <functional>

#include "mhkt/nn.hpp"

namespace mhkt_test {

/// Moves every parameter off exact zero. Freshly initialized biases sit at
/// 0, which parks many ReLU pre-activations exactly on the kink where a
/// two-sided difference disagrees with any subgradient choice.
inline void jitter_params(mhkt::nn::Registry<double>& reg, std::uint64_t seed, double scale = 0.05) {
  mhkt::Rng rng(seed);
  for (const auto& ref : reg.refs())
    for (Eigen::Index i = 0; i < ref.value->size(); ++i) ref.value->data()[i] += rng.uniform(0.01, scale);
}

inline Eigen::VectorXd finite_diff_gradient(mhkt::nn::Registry<double>& reg,
                                            const std::function<double()>& loss_fn, double h = 1e-5) {
  Eigen::VectorXd grad(reg.count());
  Eigen::Index at = 0;
  for (const auto& ref : reg.refs()) {
    for (Eigen::Index i = 0; i < ref.value->size(); ++i) {
      double* p = &ref.value->data()[i];
      const double saved = *p;
      const double step = h * std::max(1.0, std::abs(saved));
      *p = saved + step;
      const double up = loss_fn();
      *p = saved - step;
      const double down = loss_fn();
      *p = saved;
      grad(at++) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

/// Worst relative disagreement; coordinates below `floor` in both vectors
/// compare absolutely against the floor.
inline double max_rel_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric, double floor = 1e-7) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({floor, std::abs(analytic(i)), std::abs(numeric(i))});
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / denom);
  }
  return worst;
}

}  // namespace mhkt_test

#include "mhkt/tsne.hpp"

#include <cmath>
#include <stdexcept>

#include "mhkt/rng.hpp"

namespace mhkt {

namespace {

// Per-point precision search so that the conditional distribution's
// perplexity matches the target.
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& d2, double perplexity) {
  const Eigen::Index n = d2.rows();
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  const double log_perp = std::log(perplexity);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, beta_lo = 0.0, beta_hi = std::numeric_limits<double>::infinity();
    Eigen::VectorXd row;
    for (int it = 0; it < 60; ++it) {
      row = (-beta * d2.row(i).transpose().array()).exp();
      row(i) = 0.0;
      const double sum = std::max(row.sum(), 1e-300);
      const double h = std::log(sum) + beta * (d2.row(i).transpose().array() * row.array()).sum() / sum;
      const double diff = h - log_perp;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2 : 0.5 * (beta + beta_hi);
      } else {
        beta_hi = beta;
        beta = 0.5 * (beta + beta_lo);
      }
    }
    p.row(i) = row.transpose() / std::max(row.sum(), 1e-300);
  }
  return p;
}

}  // namespace

Eigen::MatrixXd tsne_embed(const Eigen::MatrixXd& x, const TsneConfig& cfg) {
  const Eigen::Index n = x.rows();
  if (n < 3) throw std::invalid_argument("tsne_embed: need at least 3 points");
  const double perplexity = std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0);

  // pairwise squared distances
  Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * x * x.transpose()).colwise() + sq;
  d2.rowwise() += sq.transpose();
  d2 = d2.cwiseMax(0.0);

  Eigen::MatrixXd p = conditional_affinities(d2, perplexity);
  p = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);

  Rng rng(cfg.seed);
  Eigen::MatrixXd y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = 1e-4 * rng.normal01();
    y(i, 1) = 1e-4 * rng.normal01();
  }

  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  const int exaggeration_until = std::min(100, cfg.iterations / 4);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double exaggeration = it < exaggeration_until ? 4.0 : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;

    Eigen::VectorXd ysq = y.rowwise().squaredNorm();
    Eigen::MatrixXd num = (-2.0 * y * y.transpose()).colwise() + ysq;
    num.rowwise() += ysq.transpose();
    num = (1.0 + num.array()).inverse().matrix();
    for (Eigen::Index i = 0; i < n; ++i) num(i, i) = 0.0;
    const double qsum = std::max(num.sum(), 1e-300);

    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double pq = exaggeration * p(i, j) - num(i, j) / qsum;
        const double w = 4.0 * pq * num(i, j);
        grad.row(i) += w * (y.row(i) - y.row(j));
      }
    }
    velocity = momentum * velocity - cfg.learning_rate * grad;
    y += velocity;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

}  // namespace mhkt

#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace mhkt {

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 500;
  double learning_rate = 200.0;
  std::uint64_t seed = 7;
};

/// Deterministic 2-D t-SNE embedding of the rows of x (exact O(n^2) variant).
Eigen::MatrixXd tsne_embed(const Eigen::MatrixXd& x, const TsneConfig& cfg);

}  // namespace mhkt

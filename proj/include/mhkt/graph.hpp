#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "mhkt/ascsim.hpp"

namespace mhkt {

/// One scattering-center set as a graph sample for the source encoder.
/// Node features: [A, L, alpha, x, y, z, is_distributed], positions centered
/// to zero mean and amplitudes normalized to max 1 per sample.
struct Graph {
  Eigen::MatrixXd node_features;          // n_nodes x 7
  std::vector<std::pair<int, int>> edges; // directed (src, dst), includes self-loops
};

constexpr int kGraphFeatureDim = 7;

/// Symmetrized k-nearest-neighbour graph over 3-D positions, plus self-loops.
/// k is clamped to n_nodes - 1; a single node yields one self-loop.
Graph build_graph(const std::vector<ascsim::ScatteringCenter>& scs, int k = 5);

/// Row-stochastic aggregation operator: row i averages node i's out-neighbours
/// (self-loop included).
Eigen::MatrixXd aggregation_matrix(const Graph& g);

}  // namespace mhkt

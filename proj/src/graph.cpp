#include "mhkt/graph.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace mhkt {

Graph build_graph(const std::vector<ascsim::ScatteringCenter>& scs, int k) {
  if (scs.empty()) throw std::invalid_argument("build_graph: empty scatterer list");
  if (k < 1) throw std::invalid_argument("build_graph: k must be >= 1");

  const int n = static_cast<int>(scs.size());
  const int k_eff = std::min(k, n - 1);

  Eigen::MatrixXd pos(n, 3);
  for (int i = 0; i < n; ++i) pos.row(i) << scs[i].x, scs[i].y, scs[i].z;
  const Eigen::RowVector3d mean = pos.colwise().mean();
  pos.rowwise() -= mean;

  double max_amp = 0.0;
  for (const auto& s : scs) max_amp = std::max(max_amp, s.amplitude);

  Graph g;
  g.node_features.resize(n, kGraphFeatureDim);
  for (int i = 0; i < n; ++i) {
    const auto& s = scs[i];
    g.node_features(i, 0) = max_amp > 0.0 ? s.amplitude / max_amp : 0.0;
    g.node_features(i, 1) = s.length;
    g.node_features(i, 2) = s.freq_dependence;
    g.node_features(i, 3) = pos(i, 0);
    g.node_features(i, 4) = pos(i, 1);
    g.node_features(i, 5) = pos(i, 2);
    g.node_features(i, 6) = s.is_distributed() ? 1.0 : 0.0;
  }

  std::set<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) {
    edges.emplace(i, i);
    // distances with index tie-break for a deterministic neighbour order
    std::vector<std::pair<double, int>> dist;
    dist.reserve(n - 1);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      dist.emplace_back((pos.row(i) - pos.row(j)).squaredNorm(), j);
    }
    std::sort(dist.begin(), dist.end());
    for (int m = 0; m < k_eff; ++m) edges.emplace(i, dist[m].second);
  }
  // symmetrize
  std::set<std::pair<int, int>> sym = edges;
  for (const auto& [a, b] : edges) sym.emplace(b, a);

  g.edges.assign(sym.begin(), sym.end());
  return g;
}

Eigen::MatrixXd aggregation_matrix(const Graph& g) {
  const int n = static_cast<int>(g.node_features.rows());
  Eigen::MatrixXd agg = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(n);
  for (const auto& [src, dst] : g.edges) {
    if (src < 0 || src >= n || dst < 0 || dst >= n) throw std::invalid_argument("aggregation_matrix: edge out of range");
    agg(src, dst) += 1.0;
    deg(src) += 1.0;
  }
  for (int i = 0; i < n; ++i) {
    if (deg(i) == 0.0) throw std::invalid_argument("aggregation_matrix: node without edges");
    agg.row(i) /= deg(i);
  }
  return agg;
}

}  // namespace mhkt

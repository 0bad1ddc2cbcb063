#include <doctest.h>

#include <algorithm>
#include <set>

#include "mhkt/encoders.hpp"
#include "support/finite_diff.hpp"

using namespace mhkt;

namespace {

ascsim::ScatteringCenter sc_at(double x, double y, double z, double a = 1.0, double len = 0.0) {
  ascsim::ScatteringCenter s;
  s.amplitude = a;
  s.x = x;
  s.y = y;
  s.z = z;
  s.length = len;
  return s;
}

std::vector<ascsim::ScatteringCenter> random_scs(int n, Rng& rng) {
  std::vector<ascsim::ScatteringCenter> v;
  for (int i = 0; i < n; ++i) {
    auto s = sc_at(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2), rng.uniform(0.2, 2.0));
    if (rng.uniform01() < 0.4) s.length = rng.uniform(0.5, 2.5);
    v.push_back(s);
  }
  return v;
}

}  // namespace

TEST_CASE("build_graph: three collinear nodes with k=1 connect through the middle") {
  const auto g = build_graph({sc_at(-1, 0, 0), sc_at(0, 0, 0), sc_at(1, 0, 0)}, 1);
  const std::set<std::pair<int, int>> edges(g.edges.begin(), g.edges.end());
  // ends pick the middle; symmetrization gives the middle both ends
  CHECK(edges.count({0, 1}));
  CHECK(edges.count({2, 1}));
  CHECK(edges.count({1, 0}));
  CHECK(edges.count({1, 2}));
  CHECK(edges.count({0, 0}));
  CHECK(edges.count({1, 1}));
  CHECK(edges.count({2, 2}));
  CHECK(!edges.count({0, 2}));
  CHECK(!edges.count({2, 0}));
}

TEST_CASE("build_graph: single node degenerates to one self-loop") {
  const auto g = build_graph({sc_at(1, 2, 3)}, 5);
  REQUIRE(g.node_features.rows() == 1);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.edges[0] == std::pair<int, int>(0, 0));
  // centered position
  CHECK(g.node_features(0, 3) == 0.0);
  CHECK(g.node_features(0, 4) == 0.0);
  CHECK(g.node_features(0, 5) == 0.0);
}

TEST_CASE("build_graph: kNN edges match a brute-force oracle, k=5 on 10 nodes") {
  Rng rng(17);
  const auto scs = random_scs(10, rng);
  const auto g = build_graph(scs, 5);
  const std::set<std::pair<int, int>> edges(g.edges.begin(), g.edges.end());

  // brute-force 5 nearest neighbours per node over raw positions
  for (int i = 0; i < 10; ++i) {
    std::vector<std::pair<double, int>> d;
    for (int j = 0; j < 10; ++j) {
      if (j == i) continue;
      const double dx = scs[i].x - scs[j].x, dy = scs[i].y - scs[j].y, dz = scs[i].z - scs[j].z;
      d.push_back({dx * dx + dy * dy + dz * dz, j});
    }
    std::sort(d.begin(), d.end());
    CHECK(edges.count({i, i}));          // self-loop
    for (int m = 0; m < 5; ++m) {
      CHECK(edges.count({i, d[m].second}));  // out-degree k+1 before symmetrization
    }
  }
  // symmetrized
  for (const auto& [a, b] : g.edges) CHECK(edges.count({b, a}));
  // per-sample normalizations
  CHECK(g.node_features.col(0).maxCoeff() == doctest::Approx(1.0));
  CHECK(std::abs(g.node_features.col(3).mean()) < 1e-12);
  CHECK(std::abs(g.node_features.col(4).mean()) < 1e-12);
  CHECK(std::abs(g.node_features.col(5).mean()) < 1e-12);
  for (int i = 0; i < 10; ++i)
    CHECK(g.node_features(i, 6) == (scs[i].length > 0 ? 1.0 : 0.0));
}

TEST_CASE("build_graph clamps k to n-1 and validates input") {
  const auto g = build_graph({sc_at(0, 0, 0), sc_at(1, 0, 0)}, 99);
  // two nodes: each connects to itself and the other
  CHECK(g.edges.size() == 4);
  CHECK_THROWS_AS(build_graph({}, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_graph({sc_at(0, 0, 0)}, 0), std::invalid_argument);
}

TEST_CASE("aggregation matrix rows are stochastic") {
  Rng rng(3);
  const auto g = build_graph(random_scs(7, rng), 3);
  const auto agg = aggregation_matrix(g);
  for (int i = 0; i < 7; ++i) CHECK(agg.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("graph encoder emits 128-D SESF vectors and ignores node order") {
  Rng rng(11);
  const auto scs = random_scs(9, rng);

  Rng init(123);
  GraphEncoder<double> enc(GraphEncoderConfig{}, init);

  const auto g = build_graph(scs, 5);
  auto tg = TypedGraph<double>::from(g);
  const auto out = enc.forward({&tg}, false);
  REQUIRE(out.rows() == 1);
  CHECK(out.cols() == 128);

  // permute the scatterer list; mean aggregation + pooling must not care
  std::vector<ascsim::ScatteringCenter> perm = {scs[4], scs[8], scs[0], scs[2], scs[6], scs[1], scs[7], scs[3], scs[5]};
  auto tgp = TypedGraph<double>::from(build_graph(perm, 5));
  const auto out_p = enc.forward({&tgp}, false);
  CHECK((out - out_p).cwiseAbs().maxCoeff() < 1e-6 * std::max(1.0, out.cwiseAbs().maxCoeff()));
}

TEST_CASE("graph encoder gradients match finite differences on a shrunken config") {
  Rng rng(29);
  Rng init(7);
  GraphEncoderConfig cfg{kGraphFeatureDim, 6, 2, 5};
  GraphEncoder<double> enc(cfg, init);
  nn::Registry<double> reg;
  enc.register_params(reg, "genc");
  REQUIRE(reg.count() <= 1000);

  std::vector<TypedGraph<double>> graphs;
  for (int i = 0; i < 3; ++i) graphs.push_back(TypedGraph<double>::from(build_graph(random_scs(5 + i, rng), 2)));
  std::vector<const TypedGraph<double>*> batch;
  for (auto& g : graphs) batch.push_back(&g);

  // fixed projection so the scalar loss exercises every output
  nn::Mat<double> w(3, 5);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal01();

  auto loss = [&]() { return (enc.forward(batch, false).array() * w.array()).sum(); };

  reg.zero_grads();
  enc.forward(batch, true);
  enc.backward(batch, w);
  const Eigen::VectorXd analytic = reg.flatten_grads();
  const Eigen::VectorXd numeric = mhkt_test::finite_diff_gradient(reg, loss);
  CHECK(mhkt_test::max_rel_error(analytic, numeric) < 1e-4);
}

TEST_CASE("image encoder flattens 128x128 to exactly 3136 features") {
  Rng init(5);
  ImageEncoder<float> enc(ImageEncoderConfig::standard(), init);
  CHECK(enc.out_dim() == 3136);

  nn::Mat<float> img(1, 128 * 128);
  Rng rng(6);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(rng.uniform01());
  const auto out = enc.forward(img, false);
  CHECK(out.cols() == 3136);
  CHECK(out.allFinite());

  nn::Mat<float> bad(1, 64 * 64);
  bad.setZero();
  CHECK_THROWS_AS(enc.forward(bad, false), std::invalid_argument);
}

TEST_CASE("image encoder maps the zero image to zero with zero biases") {
  Rng init(5);
  ImageEncoder<float> enc(ImageEncoderConfig::standard(), init);  // biases start at zero
  nn::Mat<float> img = nn::Mat<float>::Zero(2, 128 * 128);
  const auto out = enc.forward(img, false);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("image encoder gradients match finite differences on a shrunken config") {
  Rng init(31);
  ImageEncoderConfig cfg;
  cfg.in_h = cfg.in_w = 12;
  cfg.channels = {2, 2};
  cfg.final_channels = 3;
  cfg.final_kernel = 2;
  ImageEncoder<double> enc(cfg, init);
  nn::Registry<double> reg;
  enc.register_params(reg, "ienc");
  REQUIRE(reg.count() <= 1000);

  Rng rng(8);
  nn::Mat<double> img(2, 12 * 12);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform01();
  nn::Mat<double> w(2, enc.out_dim());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal01();

  auto loss = [&]() { return (enc.forward(img, false).array() * w.array()).sum(); };

  reg.zero_grads();
  enc.forward(img, true);
  enc.backward(w);
  const Eigen::VectorXd analytic = reg.flatten_grads();
  const Eigen::VectorXd numeric = mhkt_test::finite_diff_gradient(reg, loss);
  CHECK(mhkt_test::max_rel_error(analytic, numeric) < 1e-4);
}

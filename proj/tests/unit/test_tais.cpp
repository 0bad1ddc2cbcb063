#include <doctest.h>

#include <cmath>

#include "mhkt/tais.hpp"
#include "support/finite_diff.hpp"

using namespace mhkt;
using nn::Mat;
using nn::Vec;

TEST_CASE("bottleneck with zeroed parameters: mu = 0, sigma = softplus(0) + floor") {
  Rng init(1);
  tais::Bottleneck<double> b(4, 6, 3, init);
  nn::Registry<double> reg;
  b.register_params(reg, "b");
  reg.set_values(Vec<double>::Zero(reg.count()));

  Mat<double> x = Mat<double>::Zero(2, 4);
  const auto out = b.forward(x);
  CHECK(out.mu.cwiseAbs().maxCoeff() == 0.0);
  const double expected = std::log(2.0) + 1e-6;
  CHECK(out.sigma.minCoeff() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(out.sigma.maxCoeff() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bottleneck sigma is strictly positive for arbitrary inputs") {
  Rng init(2);
  tais::Bottleneck<double> b(5, 8, 4, init);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Mat<double> x(3, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 10.0 * rng.normal01();
    const auto out = b.forward(x);
    CHECK(out.sigma.minCoeff() > 0.0);
  }
  Mat<double> bad(1, 5);
  bad.setZero();
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(b.forward(bad), std::invalid_argument);
}

TEST_CASE("bottleneck head gradients match finite differences") {
  Rng init(4);
  tais::Bottleneck<double> b(3, 5, 2, init);
  nn::Registry<double> reg;
  b.register_params(reg, "b");
  REQUIRE(reg.count() <= 200);

  Rng rng(5);
  Mat<double> x(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal01();
  Mat<double> wmu(4, 2), wsig(4, 2);
  for (Eigen::Index i = 0; i < wmu.size(); ++i) wmu.data()[i] = rng.normal01();
  for (Eigen::Index i = 0; i < wsig.size(); ++i) wsig.data()[i] = rng.normal01();

  auto loss = [&]() {
    const auto out = b.forward(x);
    return (out.mu.array() * wmu.array()).sum() + (out.sigma.array() * wsig.array()).sum();
  };

  reg.zero_grads();
  const auto out = b.forward(x);
  b.backward(out, wmu, wsig);
  const Eigen::VectorXd analytic = reg.flatten_grads();
  const Eigen::VectorXd numeric = mhkt_test::finite_diff_gradient(reg, loss);
  CHECK(mhkt_test::max_rel_error(analytic, numeric) < 1e-4);
}

TEST_CASE("reparameterize: zero noise returns mu; unit case returns eps") {
  Mat<double> mu(2, 3), sigma(2, 3), eps(2, 3);
  mu << 1, 2, 3, 4, 5, 6;
  sigma.setOnes();
  eps.setZero();
  CHECK((tais::reparameterize(mu, sigma, eps) - mu).cwiseAbs().maxCoeff() == 0.0);

  mu.setZero();
  eps << -1, 0.5, 2, 0.1, -0.3, 0.9;
  CHECK((tais::reparameterize(mu, sigma, eps) - eps).cwiseAbs().maxCoeff() == 0.0);

  Mat<double> bad_sigma = sigma;
  bad_sigma(0, 0) = 0.0;
  CHECK_THROWS_AS(tais::reparameterize(mu, bad_sigma, eps), std::invalid_argument);
  Mat<double> short_eps(1, 3);
  short_eps.setZero();
  CHECK_THROWS_AS(tais::reparameterize(mu, sigma, short_eps), std::invalid_argument);
}

TEST_CASE("reparameterize: empirical mean over 1e5 draws approaches mu") {
  Rng rng(77);
  const int n = 100000;
  Mat<double> mu(1, 2), sigma(1, 2);
  mu << 0.7, -1.2;
  sigma << 0.5, 2.0;
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) {
    Mat<double> eps(1, 2);
    eps << rng.normal01(), rng.normal01();
    const auto z = tais::reparameterize(mu, sigma, eps);
    acc(0) += z(0, 0);
    acc(1) += z(0, 1);
  }
  acc /= n;
  for (int d = 0; d < 2; ++d) {
    const double se = sigma(0, d) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(acc(d) - mu(0, d)) < 3.0 * se);
  }
}

TEST_CASE("kl_to_prior closed form") {
  Vec<double> mu(1), sigma(1);
  mu << 0;
  sigma << 1;
  CHECK(tais::kl_to_prior(mu, sigma) == doctest::Approx(0.0).epsilon(1e-15));
  mu << 1;
  CHECK(tais::kl_to_prior(mu, sigma) == doctest::Approx(0.5).epsilon(1e-12));
  mu << 0;
  sigma << 2;
  CHECK(tais::kl_to_prior(mu, sigma) == doctest::Approx(1.5 - std::log(2.0)).epsilon(1e-12));
  sigma << -1;
  CHECK_THROWS_AS(tais::kl_to_prior(mu, sigma), std::invalid_argument);
}

TEST_CASE("kl_to_prior matches a 1e5-sample Monte-Carlo estimate within 1%") {
  Rng rng(123);
  Vec<double> mu(1), sigma(1);
  mu << 0;
  sigma << 2;
  const double exact = tais::kl_to_prior(mu, sigma);
  double acc = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = mu(0) + sigma(0) * rng.normal01();
    const double log_p = -0.5 * (z - mu(0)) * (z - mu(0)) / (sigma(0) * sigma(0)) - std::log(sigma(0));
    const double log_r = -0.5 * z * z;
    acc += log_p - log_r;
  }
  acc /= n;
  CHECK(std::abs(acc - exact) / exact < 0.01);
}

TEST_CASE("kl_to_prior is nonnegative, zero only at the prior") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    Vec<double> mu(3), sigma(3);
    for (int d = 0; d < 3; ++d) {
      mu(d) = 3.0 * rng.normal01();
      sigma(d) = rng.uniform(0.05, 3.0);
    }
    const double kl = tais::kl_to_prior(mu, sigma);
    CHECK(kl >= -1e-12);
    const bool at_prior = mu.cwiseAbs().maxCoeff() < 1e-12 && (sigma.array() - 1.0).abs().maxCoeff() < 1e-12;
    if (!at_prior) CHECK(kl > 0.0);
  }
  Vec<double> mu0 = Vec<double>::Zero(4), sig1 = Vec<double>::Ones(4);
  CHECK(tais::kl_to_prior(mu0, sig1) == 0.0);
}

TEST_CASE("tais_loss composition") {
  Mat<double> logits(2, 3);
  logits.setZero();  // uniform
  std::vector<int> labels = {0, 2};
  Mat<double> mu = Mat<double>::Zero(2, 4);
  Mat<double> sigma = Mat<double>::Ones(2, 4);

  // beta = 0 reduces to plain cross-entropy; uniform logits give ln 3
  CHECK(tais::tais_loss(logits, labels, mu, sigma, 0.0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  // zero KL: beta irrelevant
  CHECK(tais::tais_loss(logits, labels, mu, sigma, 1.0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Mat<double> sigma2 = 2.0 * sigma;
  const double kl_per_row = 4 * (1.5 - std::log(2.0));
  CHECK(tais::tais_loss(logits, labels, mu, sigma2, 0.5) ==
        doctest::Approx(std::log(3.0) + 0.5 * kl_per_row).epsilon(1e-12));

  std::vector<int> bad = {0, 3};
  CHECK_THROWS_AS(tais::tais_loss(logits, bad, mu, sigma, 0.0), std::out_of_range);
}

TEST_CASE("tais_loss decreases over 50 steps on a separable toy problem") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng init(derive_seed(seed, "toy_init"));
    tais::Bottleneck<double> bneck(4, 8, 4, init);
    nn::Dense<double> clf(4, 2, true, init);
    nn::Registry<double> reg;
    bneck.register_params(reg, "b");
    clf.register_params(reg, "c");
    nn::Adam<double> opt(reg, 5e-3);

    Rng rng(derive_seed(seed, "toy_data"));
    const int n = 40;
    Mat<double> x(n, 4);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      y[i] = i % 2;
      const double center = y[i] == 0 ? -2.0 : 2.0;
      for (int d = 0; d < 4; ++d) x(i, d) = center + 0.5 * rng.normal01();
    }

    const double beta = 1e-3;
    double first = 0, last = 0;
    for (int step = 0; step < 50; ++step) {
      Mat<double> eps(n, 4);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal01();

      const auto bo = bneck.forward(x);
      const auto z = tais::reparameterize(bo.mu, bo.sigma, eps);
      const auto logits = clf.forward(z);
      const double loss = tais::tais_loss(logits, y, bo.mu, bo.sigma, beta);
      if (step == 0) first = loss;
      if (step == 49) last = loss;

      reg.zero_grads();
      const auto probs = nn::softmax_rows(logits);
      Mat<double> dlogits = nn::cross_entropy_backward(probs, y, 1.0);
      Mat<double> dz = clf.backward(z, dlogits);
      auto [dmu, dsigma] = tais::kl_backward(bo.mu, bo.sigma, beta);
      dmu += dz;
      dsigma += (dz.array() * eps.array()).matrix();
      bneck.backward(bo, dmu, dsigma);
      opt.step(reg);
    }
    if (last < first) ++wins;
  }
  CHECK(wins >= 3);
}

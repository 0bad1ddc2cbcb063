#pragma once

#include <stdexcept>
#include <vector>

#include "mhkt/mathx.hpp"
#include "mhkt/nn.hpp"

namespace mhkt::tais {

constexpr double kSigmaFloor = 1e-6;

/// Variational posterior parameters for a batch, plus the forward context
/// needed to push gradients back through the two heads.
template <class S>
struct BottleneckOut {
  nn::Mat<S> mu;     // n x d_z
  nn::Mat<S> sigma;  // n x d_z, strictly positive
  // context
  nn::Mat<S> input;
  nn::Mat<S> hidden;
  nn::Mat<S> raw;
};

/// Per-domain information selector: a shared hidden layer with mean and
/// scale heads; sigma = softplus(raw) + 1e-6 keeps the scale positive.
template <class S>
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(Eigen::Index in, Eigen::Index hidden, Eigen::Index dz, Rng& rng)
      : shared_(in, hidden, true, rng), mu_head_(hidden, dz, true, rng), raw_head_(hidden, dz, true, rng) {}

  BottleneckOut<S> forward(const nn::Mat<S>& x) const {
    if (!x.allFinite()) throw std::invalid_argument("Bottleneck: non-finite input");
    BottleneckOut<S> out;
    out.input = x;
    out.hidden = nn::relu(shared_.forward(x));
    out.mu = mu_head_.forward(out.hidden);
    out.raw = raw_head_.forward(out.hidden);
    out.sigma = out.raw.unaryExpr([](S v) { return softplus(v) + static_cast<S>(kSigmaFloor); });
    return out;
  }

  /// Accumulates parameter gradients and returns d loss / d input.
  nn::Mat<S> backward(const BottleneckOut<S>& ctx, const nn::Mat<S>& d_mu, const nn::Mat<S>& d_sigma) {
    nn::Mat<S> d_raw = (d_sigma.array() * ctx.raw.unaryExpr([](S v) { return sigmoid(v); }).array()).matrix();
    nn::Mat<S> dh = mu_head_.backward(ctx.hidden, d_mu);
    dh += raw_head_.backward(ctx.hidden, d_raw);
    nn::Mat<S> dpre = nn::relu_backward(ctx.hidden, dh);
    return shared_.backward(ctx.input, dpre);
  }

  void register_params(nn::Registry<S>& reg, const std::string& prefix) {
    shared_.register_params(reg, prefix + ".shared");
    mu_head_.register_params(reg, prefix + ".mu");
    raw_head_.register_params(reg, prefix + ".sigma");
  }

  Eigen::Index latent_dim() const { return mu_head_.out_dim(); }

 private:
  nn::Dense<S> shared_, mu_head_, raw_head_;
};

/// z = mu + sigma .* eps, elementwise.
template <class S>
nn::Mat<S> reparameterize(const nn::Mat<S>& mu, const nn::Mat<S>& sigma, const nn::Mat<S>& eps) {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols() || mu.rows() != eps.rows() || mu.cols() != eps.cols())
    throw std::invalid_argument("reparameterize: dimension mismatch");
  if ((sigma.array() <= S(0)).any()) throw std::invalid_argument("reparameterize: sigma must be positive");
  return mu + (sigma.array() * eps.array()).matrix();
}

/// KL(N(mu, diag sigma^2) || N(0, I)) = sum_d (sigma^2 + mu^2 - 1)/2 - ln sigma.
template <class S>
S kl_to_prior(const nn::Vec<S>& mu, const nn::Vec<S>& sigma) {
  if (mu.size() != sigma.size()) throw std::invalid_argument("kl_to_prior: dimension mismatch");
  if ((sigma.array() <= S(0)).any()) throw std::invalid_argument("kl_to_prior: sigma must be positive");
  return ((sigma.array().square() + mu.array().square() - S(1)) * S(0.5) - sigma.array().log()).sum();
}

/// Per-row KL against the standard normal prior.
template <class S>
nn::Vec<S> kl_to_prior_rows(const nn::Mat<S>& mu, const nn::Mat<S>& sigma) {
  if ((sigma.array() <= S(0)).any()) throw std::invalid_argument("kl_to_prior_rows: sigma must be positive");
  return ((sigma.array().square() + mu.array().square() - S(1)) * S(0.5) - sigma.array().log())
      .rowwise()
      .sum()
      .matrix();
}

/// d(scale * mean_i KL_i)/d(mu, sigma).
template <class S>
std::pair<nn::Mat<S>, nn::Mat<S>> kl_backward(const nn::Mat<S>& mu, const nn::Mat<S>& sigma, S scale) {
  const S f = scale / static_cast<S>(mu.rows());
  nn::Mat<S> dmu = f * mu;
  nn::Mat<S> dsigma = (f * (sigma.array() - sigma.array().inverse())).matrix();
  return {std::move(dmu), std::move(dsigma)};
}

/// Single-draw bound estimate: mean_i [CE(logits_i, y_i) + beta * KL_i].
template <class S>
S tais_loss(const nn::Mat<S>& logits, const std::vector<int>& labels, const nn::Mat<S>& mu, const nn::Mat<S>& sigma,
            S beta) {
  const S ce = nn::cross_entropy(logits, labels);
  const S kl = kl_to_prior_rows(mu, sigma).sum() / static_cast<S>(mu.rows());
  return ce + beta * kl;
}

}  // namespace mhkt::tais

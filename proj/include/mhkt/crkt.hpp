#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mhkt/nn.hpp"

namespace mhkt::crkt {

constexpr double kLogFloor = 1e-12;

/// Per-class soft labels q^(k): mean classifier probability over the source
/// samples of class k. Treated as constants during the epoch.
template <class S>
struct SoftLabelBank {
  nn::Mat<S> q;  // K x K, row k = q^(k)
  int epoch_stamp = -1;

  bool valid() const { return q.rows() > 0 && q.rows() == q.cols(); }
};

/// Builds the bank from classifier outputs over the full source set.
/// classifier_logits: n x K over source common-space features; every class
/// must contribute at least one sample.
template <class S>
SoftLabelBank<S> compute_soft_labels(const nn::Mat<S>& classifier_logits, const std::vector<int>& labels,
                                     int num_classes, int epoch_stamp = 0) {
  if (static_cast<Eigen::Index>(labels.size()) != classifier_logits.rows())
    throw std::invalid_argument("compute_soft_labels: label count mismatch");
  SoftLabelBank<S> bank;
  bank.q.setZero(num_classes, num_classes);
  bank.epoch_stamp = epoch_stamp;
  std::vector<long> counts(num_classes, 0);
  const nn::Mat<S> probs = nn::softmax_rows(classifier_logits);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw std::out_of_range("compute_soft_labels: label out of range");
    bank.q.row(y) += probs.row(i);
    ++counts[y];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[k] == 0)
      throw std::invalid_argument("compute_soft_labels: class " + std::to_string(k) + " has no source samples");
    bank.q.row(k) /= static_cast<S>(counts[k]);
  }
  return bank;
}

/// Soft supervision -(1/n_l) sum_i q^(y_i)^T log p_i with a 1e-12 floor on p.
template <class S>
S soft_loss(const nn::Mat<S>& target_logits, const std::vector<int>& labels, const SoftLabelBank<S>& bank) {
  if (!bank.valid()) throw std::invalid_argument("soft_loss: invalid bank");
  if (static_cast<Eigen::Index>(labels.size()) != target_logits.rows())
    throw std::invalid_argument("soft_loss: label count mismatch");
  const nn::Mat<S> probs = nn::softmax_rows(target_logits);
  S total = S(0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= bank.q.rows()) throw std::out_of_range("soft_loss: label out of range");
    for (Eigen::Index k = 0; k < probs.cols(); ++k)
      total -= bank.q(y, k) * std::log(std::max(probs(i, k), static_cast<S>(kLogFloor)));
  }
  return total / static_cast<S>(probs.rows());
}

/// d(scale * soft_loss)/dlogits. Exact through the probability floor:
/// entries at the floor contribute no gradient through their log.
template <class S>
nn::Mat<S> soft_loss_backward(const nn::Mat<S>& target_logits, const std::vector<int>& labels,
                              const SoftLabelBank<S>& bank, S scale) {
  const nn::Mat<S> probs = nn::softmax_rows(target_logits);
  nn::Mat<S> d(probs.rows(), probs.cols());
  const S f = scale / static_cast<S>(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    // g_k = dL/dp_k; then dL/dz_j = p_j (g_j - sum_k g_k p_k)
    nn::Vec<S> g(probs.cols());
    for (Eigen::Index k = 0; k < probs.cols(); ++k)
      g(k) = probs(i, k) > static_cast<S>(kLogFloor) ? -bank.q(y, k) / probs(i, k) : S(0);
    const S dot = (g.array() * probs.row(i).transpose().array()).sum();
    for (Eigen::Index j = 0; j < probs.cols(); ++j) d(i, j) = f * probs(i, j) * (g(j) - dot);
  }
  return d;
}

/// Category-relation loss (1 - alpha) * CE + alpha * soft_loss.
/// alpha = 0 is the ablation boundary (pure cross-entropy).
template <class S>
S crkt_loss(const nn::Mat<S>& target_logits, const std::vector<int>& labels, const SoftLabelBank<S>& bank, S alpha) {
  if (!(alpha >= S(0) && alpha < S(1))) throw std::invalid_argument("crkt_loss: alpha must lie in [0, 1)");
  const S ce = nn::cross_entropy(target_logits, labels);
  if (alpha == S(0)) return ce;
  return (S(1) - alpha) * ce + alpha * soft_loss(target_logits, labels, bank);
}

}  // namespace mhkt::crkt

#pragma once

#include <stdexcept>
#include <utility>
#include <vector>

#include "mhkt/nn.hpp"

namespace mhkt::tgkt {

/// Similarity/dissimilarity structure of a labelled batch.
/// W_ij = 1 iff y_i = y_j (so diag W = 1), B = 1 - W, L_H = D - W with
/// D_jj = sum_i W_ij. m1 counts ordered same-class pairs with i != j;
/// m2 counts ordered cross-class pairs.
template <class S>
struct LabelStructure {
  nn::Mat<S> similarity;     // W
  nn::Mat<S> dissimilarity;  // B
  nn::Mat<S> laplacian;      // L_H
  long m1 = 0;
  long m2 = 0;
};

template <class S>
LabelStructure<S> build_label_structure(const std::vector<int>& labels) {
  const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
  if (n < 1) throw std::invalid_argument("build_label_structure: empty label vector");
  LabelStructure<S> ls;
  ls.similarity.setZero(n, n);
  ls.dissimilarity.setZero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (labels[i] == labels[j]) {
        ls.similarity(i, j) = S(1);
        if (i != j) ++ls.m1;
      } else {
        ls.dissimilarity(i, j) = S(1);
        ++ls.m2;
      }
    }
  }
  nn::Mat<S> deg = nn::Mat<S>::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) deg(j, j) = ls.similarity.col(j).sum();
  ls.laplacian = deg - ls.similarity;
  return ls;
}

/// Index-paired marginal gap (1/n_b) sum_i ||u_s,i - u_t,i||^2. Rows are
/// paired positionally; the batch sampler's per-epoch shuffles rotate the
/// pairing across iterations.
template <class S>
S marginal_term(const nn::Mat<S>& u_s, const nn::Mat<S>& u_t) {
  if (u_s.rows() != u_t.rows() || u_s.cols() != u_t.cols())
    throw std::invalid_argument("marginal_term: batch shapes must match");
  return (u_s - u_t).rowwise().squaredNorm().sum() / static_cast<S>(u_s.rows());
}

/// Intra-class compactness (2/m1) tr(U L_H U^T); 0 when m1 = 0.
template <class S>
S intra_class_term(const nn::Mat<S>& u, const LabelStructure<S>& ls) {
  if (ls.m1 == 0) return S(0);
  const S tr = (u.array() * (ls.laplacian * u).array()).sum();
  return S(2) / static_cast<S>(ls.m1) * tr;
}

/// Inter-class dissimilarity (1/(2 m2)) ||B .* (U U^T)||_F^2; 0 when m2 = 0.
template <class S>
S inter_class_term(const nn::Mat<S>& u, const LabelStructure<S>& ls) {
  if (ls.m2 == 0) return S(0);
  const nn::Mat<S> gram = u * u.transpose();
  return (ls.dissimilarity.array() * gram.array()).square().sum() / (S(2) * static_cast<S>(ls.m2));
}

/// Maximum Discrimination Divergence over one paired batch: the marginal gap
/// plus the Laplacian and dissimilarity terms over the stacked labelled rows.
template <class S>
S mdd_loss(const nn::Mat<S>& u_s, const nn::Mat<S>& u_t, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != u_s.rows() + u_t.rows())
    throw std::invalid_argument("mdd_loss: labels must cover both batches");
  nn::Mat<S> u(u_s.rows() + u_t.rows(), u_s.cols());
  u << u_s, u_t;
  const LabelStructure<S> ls = build_label_structure<S>(labels);
  return marginal_term(u_s, u_t) + intra_class_term(u, ls) + inter_class_term(u, ls);
}

/// Gradient of scale * mdd_loss with respect to (u_s, u_t).
template <class S>
std::pair<nn::Mat<S>, nn::Mat<S>> mdd_backward(const nn::Mat<S>& u_s, const nn::Mat<S>& u_t,
                                               const std::vector<int>& labels, S scale) {
  const Eigen::Index nb = u_s.rows();
  nn::Mat<S> u(nb + u_t.rows(), u_s.cols());
  u << u_s, u_t;
  const LabelStructure<S> ls = build_label_structure<S>(labels);

  nn::Mat<S> du = nn::Mat<S>::Zero(u.rows(), u.cols());
  if (ls.m1 > 0) du.noalias() += (S(4) / static_cast<S>(ls.m1)) * (ls.laplacian * u);
  if (ls.m2 > 0) {
    const nn::Mat<S> masked = (ls.dissimilarity.array() * (u * u.transpose()).array()).matrix();
    du.noalias() += (S(2) / static_cast<S>(ls.m2)) * (masked * u);
  }

  nn::Mat<S> dus = du.topRows(nb);
  nn::Mat<S> dut = du.bottomRows(u_t.rows());
  const nn::Mat<S> diff = (S(2) / static_cast<S>(nb)) * (u_s - u_t);
  dus += diff;
  dut -= diff;
  dus *= scale;
  dut *= scale;
  return {std::move(dus), std::move(dut)};
}

}  // namespace mhkt::tgkt

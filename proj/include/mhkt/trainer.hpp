#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhkt/crkt.hpp"
#include "mhkt/dataset.hpp"
#include "mhkt/model.hpp"
#include "mhkt/tgkt.hpp"

namespace mhkt {

enum class Variant { mhkt, target_only, source_finetune, mmd_baseline, coral_baseline };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::mhkt: return "mhkt";
    case Variant::target_only: return "target_only";
    case Variant::source_finetune: return "source_finetune";
    case Variant::mmd_baseline: return "mmd_baseline";
    case Variant::coral_baseline: return "coral_baseline";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "mhkt") return Variant::mhkt;
  if (s == "target_only") return Variant::target_only;
  if (s == "source_finetune") return Variant::source_finetune;
  if (s == "mmd_baseline") return Variant::mmd_baseline;
  if (s == "coral_baseline") return Variant::coral_baseline;
  throw std::invalid_argument("unknown variant: " + s);
}

struct Toggles {
  bool tais = true;
  bool tgkt = true;
  bool crkt = true;
};

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 2.0;
  double beta = 1e-3;
  double alpha = 0.06;

  void validate() const {
    if (!(lambda1 >= 0) || !(lambda2 >= 0) || !(beta >= 0)) throw std::invalid_argument("loss weights must be >= 0");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in [0, 1)");
    if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || !std::isfinite(beta) || !std::isfinite(alpha))
      throw std::invalid_argument("loss weights must be finite");
  }
};

struct TrainConfig {
  int labeled_per_class = 10;  // -1 selects the full target training split
  int batch = 12;              // per-domain batch size n_b
  int epochs = 100;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  Variant variant = Variant::mhkt;
  Toggles toggles;
  LossWeights weights;
  int eval_every = 1;
  int steps_per_epoch = 0;  // 0: ceil(labeled pool / batch)
  int knn_k = 5;

  // architecture (defaults give the 128-D SESF / 3136-D image contract on
  // 128x128 inputs; tests shrink these for finite-difference checks)
  int sesf_dim = 128;
  int latent_dim = 64;
  int common_dim = 128;
  int graph_hidden = 64;
  int graph_layers = 3;
  int bottleneck_hidden = 128;
  std::vector<int> image_channels = {16, 32, 64, 64};
  int image_final_channels = 64;
  int image_final_kernel = 2;

  std::string out_dir;  // empty: no files are written
  bool force = false;
};

struct EpochMetrics {
  int epoch = 0;
  double total = 0, tais = 0, mdd = 0, crkt = 0;
  double sup_ce = 0, kl = 0, ce_t = 0, soft = 0, align = 0;
  double accuracy = -1;  // -1: not evaluated this epoch
};

struct EvalResult {
  double accuracy = 0;
  std::vector<double> per_class;
  Eigen::MatrixXi confusion;  // rows: true class, cols: predicted
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  EvalResult final_eval;
  bool replacement_sampling = false;
};

/// Rebuilds a TrainConfig from a run directory's resolved config.json.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.labeled_per_class = j.at("labeled_per_class").get<int>();
  cfg.batch = j.at("batch").get<int>();
  cfg.epochs = j.at("epochs").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.variant = parse_variant(j.at("variant").get<std::string>());
  cfg.toggles.tais = j.at("toggles").at("tais").get<bool>();
  cfg.toggles.tgkt = j.at("toggles").at("tgkt").get<bool>();
  cfg.toggles.crkt = j.at("toggles").at("crkt").get<bool>();
  cfg.weights.lambda1 = j.at("weights").at("lambda1").get<double>();
  cfg.weights.lambda2 = j.at("weights").at("lambda2").get<double>();
  cfg.weights.beta = j.at("weights").at("beta").get<double>();
  cfg.weights.alpha = j.at("weights").at("alpha").get<double>();
  cfg.eval_every = j.at("eval_every").get<int>();
  cfg.steps_per_epoch = j.at("steps_per_epoch").get<int>();
  cfg.knn_k = j.at("knn_k").get<int>();
  cfg.sesf_dim = j.at("sesf_dim").get<int>();
  cfg.latent_dim = j.at("latent_dim").get<int>();
  cfg.common_dim = j.at("common_dim").get<int>();
  cfg.graph_hidden = j.at("graph_hidden").get<int>();
  cfg.graph_layers = j.at("graph_layers").get<int>();
  cfg.bottleneck_hidden = j.at("bottleneck_hidden").get<int>();
  cfg.image_channels = j.at("image_channels").get<std::vector<int>>();
  cfg.image_final_channels = j.at("image_final_channels").get<int>();
  cfg.image_final_kernel = j.at("image_final_kernel").get<int>();
  return cfg;
}

/// Linear-kernel MMD^2 between two equally wide batches.
template <class S>
S mmd_baseline_loss(const nn::Mat<S>& u_s, const nn::Mat<S>& u_t) {
  if (u_s.cols() != u_t.cols()) throw std::invalid_argument("mmd_baseline_loss: feature dims differ");
  const nn::Mat<S> diff = u_s.colwise().mean() - u_t.colwise().mean();
  return diff.squaredNorm();
}

/// CORAL: squared Frobenius gap between sample covariances, / (4 d^2).
template <class S>
S coral_baseline_loss(const nn::Mat<S>& u_s, const nn::Mat<S>& u_t) {
  if (u_s.cols() != u_t.cols()) throw std::invalid_argument("coral_baseline_loss: feature dims differ");
  if (u_s.rows() < 2 || u_t.rows() < 2) throw std::invalid_argument("coral_baseline_loss: need batches of size >= 2");
  auto cov = [](const nn::Mat<S>& u) {
    nn::Mat<S> c = u.rowwise() - u.colwise().mean();
    return nn::Mat<S>((c.transpose() * c) / static_cast<S>(u.rows() - 1));
  };
  const S d = static_cast<S>(u_s.cols());
  return (cov(u_s) - cov(u_t)).squaredNorm() / (S(4) * d * d);
}

/// Gradients of scale * the baseline losses.
template <class S>
std::pair<nn::Mat<S>, nn::Mat<S>> mmd_baseline_backward(const nn::Mat<S>& u_s, const nn::Mat<S>& u_t, S scale) {
  const nn::Mat<S> diff = u_s.colwise().mean() - u_t.colwise().mean();
  nn::Mat<S> dus(u_s.rows(), u_s.cols()), dut(u_t.rows(), u_t.cols());
  dus.rowwise() = (S(2) * scale / static_cast<S>(u_s.rows())) * diff.row(0);
  dut.rowwise() = (S(-2) * scale / static_cast<S>(u_t.rows())) * diff.row(0);
  return {std::move(dus), std::move(dut)};
}

template <class S>
std::pair<nn::Mat<S>, nn::Mat<S>> coral_baseline_backward(const nn::Mat<S>& u_s, const nn::Mat<S>& u_t, S scale) {
  auto cov = [](const nn::Mat<S>& u) {
    nn::Mat<S> c = u.rowwise() - u.colwise().mean();
    return nn::Mat<S>((c.transpose() * c) / static_cast<S>(u.rows() - 1));
  };
  const S d = static_cast<S>(u_s.cols());
  const nn::Mat<S> gap = cov(u_s) - cov(u_t);  // symmetric
  auto back = [&](const nn::Mat<S>& u, S sign) {
    nn::Mat<S> centered = u.rowwise() - u.colwise().mean();
    nn::Mat<S> dc = (sign * scale / (S(2) * d * d * static_cast<S>(u.rows() - 1))) * S(2) * (centered * gap);
    // centering backward
    nn::Mat<S> du = dc;
    du.rowwise() -= nn::Mat<S>(dc.colwise().mean()).row(0);
    return du;
  };
  return {back(u_s, S(1)), back(u_t, S(-1))};
}

/// Class-stratified epoch sampler. Each epoch independently shuffles the
/// per-class queues and interleaves them round-robin; steps consume
/// consecutive windows (wrapping), so window pairing rotates across epochs.
class BalancedSampler {
 public:
  BalancedSampler() = default;
  BalancedSampler(std::vector<int> indices, std::vector<int> labels_of_indices, int num_classes)
      : num_classes_(num_classes) {
    by_class_.resize(num_classes);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const int y = labels_of_indices[i];
      if (y < 0 || y >= num_classes) throw std::out_of_range("BalancedSampler: label out of range");
      by_class_[y].push_back(indices[i]);
    }
    pool_size_ = static_cast<int>(indices.size());
  }

  int pool_size() const { return pool_size_; }
  bool begun() const { return !order_.empty(); }

  void epoch_begin(Rng& rng) {
    order_.clear();
    order_.reserve(pool_size_);
    auto queues = by_class_;
    for (auto& q : queues) rng.shuffle(q);
    std::vector<std::size_t> at(queues.size(), 0);
    bool any = true;
    while (any) {
      any = false;
      for (int c = 0; c < num_classes_; ++c) {
        if (at[c] < queues[c].size()) {
          order_.push_back(queues[c][at[c]++]);
          any = true;
        }
      }
    }
    cursor_ = 0;
  }

  /// Next window of n indices; wraps around the epoch order. If the pool is
  /// smaller than n, samples with replacement (callers surface the flag).
  std::vector<int> next(int n, Rng& rng, bool* used_replacement) {
    std::vector<int> out;
    out.reserve(n);
    if (pool_size_ < n) {
      if (used_replacement) *used_replacement = true;
      for (int i = 0; i < n; ++i) out.push_back(order_[static_cast<std::size_t>(rng.below(order_.size()))]);
      return out;
    }
    for (int i = 0; i < n; ++i) {
      out.push_back(order_[cursor_]);
      cursor_ = (cursor_ + 1) % order_.size();
    }
    return out;
  }

 private:
  int num_classes_ = 0;
  int pool_size_ = 0;
  std::vector<std::vector<int>> by_class_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

/// One optimization step's sampled inputs. eps rows align with the batch.
template <class S>
struct StepBatch {
  std::vector<int> source_idx;  // indices into the dataset's source records
  std::vector<int> target_idx;  // indices into the target training split
  nn::Mat<S> eps_s, eps_t;      // empty unless the VIB path is active
};

namespace detail {

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

template <class S>
const char* scalar_tag() {
  return sizeof(S) == 4 ? "f32" : "f64";
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Owns the model, optimizer state, RNG streams, and the soft-label bank;
/// runs the Eq.-(26)-style composite objective over balanced dual-domain
/// batches. All variants share this loop:
///   mhkt            lambda1 * L_sup(+VIB) + lambda2 * L_MDD + L_CRKT
///   source_finetune mhkt with every module toggle off
///   target_only     cross-entropy on the labelled target subset only
///   mmd/coral       lambda1 * L_sup + lambda2 * align + CE_t
template <class S>
class Trainer {
 public:
  Trainer(const Dataset& ds, const TrainConfig& cfg) : ds_(ds), cfg_(cfg) {
    cfg_.weights.validate();
    if (cfg_.batch < 2) throw std::invalid_argument("Trainer: batch size must be >= 2");
    if (cfg_.epochs < 0) throw std::invalid_argument("Trainer: epochs must be >= 0");
    const int K = ds.manifest.num_classes;

    ModelConfig mc;
    mc.graph_enc = GraphEncoderConfig{kGraphFeatureDim, cfg_.graph_hidden, cfg_.graph_layers, cfg_.sesf_dim};
    mc.image_enc.in_h = ds.manifest.image_h;
    mc.image_enc.in_w = ds.manifest.image_w;
    mc.image_enc.channels = cfg_.image_channels;
    mc.image_enc.final_channels = cfg_.image_final_channels;
    mc.image_enc.final_kernel = cfg_.image_final_kernel;
    mc.latent_dim = cfg_.latent_dim;
    mc.common_dim = cfg_.common_dim;
    mc.num_classes = K;
    mc.bottleneck_hidden = cfg_.bottleneck_hidden;
    model_ = std::make_unique<MhktModel<S>>(mc, cfg_.seed);
    registry_ = model_->make_registry();
    opt_ = nn::Adam<S>(registry_, cfg_.learning_rate);

    // source graphs, cast once
    source_labels_.reserve(ds.source.size());
    source_graphs_.reserve(ds.source.size());
    for (const auto& rec : ds.source) {
      source_labels_.push_back(rec.label);
      source_graphs_.push_back(TypedGraph<S>::from(build_graph(rec.centers, cfg_.knn_k)));
    }

    train_images_ = ds.target_train.data.template cast<S>();
    test_images_ = ds.target_test.data.template cast<S>();

    // labelled target subset: fixed once per seed
    labeled_idx_ = select_labeled_subset();
    std::vector<int> labeled_labels;
    for (int idx : labeled_idx_) labeled_labels.push_back(ds.target_train.labels[idx]);
    target_sampler_ = BalancedSampler(labeled_idx_, labeled_labels, K);

    std::vector<int> src_idx(ds.source.size());
    std::iota(src_idx.begin(), src_idx.end(), 0);
    source_sampler_ = BalancedSampler(src_idx, source_labels_, K);

    rng_batch_ = Rng(derive_seed(cfg_.seed, "batches"));
    rng_eps_ = Rng(derive_seed(cfg_.seed, "reparam_eps"));
    bank_.q.setZero(K, K);
  }

  const TrainConfig& config() const { return cfg_; }
  MhktModel<S>& model() { return *model_; }
  nn::Registry<S>& registry() { return registry_; }
  const std::vector<int>& labeled_indices() const { return labeled_idx_; }
  const crkt::SoftLabelBank<S>& bank() const { return bank_; }
  crkt::SoftLabelBank<S>& bank() { return bank_; }
  int epoch() const { return epoch_; }
  int steps_per_epoch() const {
    return cfg_.steps_per_epoch > 0 ? cfg_.steps_per_epoch
                                    : std::max(1, detail::ceil_div(target_sampler_.pool_size(), cfg_.batch));
  }

  bool uses_source() const { return cfg_.variant != Variant::target_only; }
  bool vib_active() const { return cfg_.variant == Variant::mhkt && cfg_.toggles.tais; }
  bool mdd_active() const { return cfg_.variant == Variant::mhkt && cfg_.toggles.tgkt; }
  bool soft_active() const { return cfg_.variant == Variant::mhkt && cfg_.toggles.crkt; }

  /// Draws the next step's batches (and reparameterization noise).
  StepBatch<S> sample_batch() {
    if (!target_sampler_.begun()) {
      if (uses_source()) source_sampler_.epoch_begin(rng_batch_);
      target_sampler_.epoch_begin(rng_batch_);
    }
    StepBatch<S> b;
    if (uses_source()) b.source_idx = source_sampler_.next(cfg_.batch, rng_batch_, &replacement_used_);
    b.target_idx = target_sampler_.next(cfg_.batch, rng_batch_, &replacement_used_);
    if (vib_active()) {
      const int dz = cfg_.latent_dim;
      b.eps_s.resize(b.source_idx.size(), dz);
      for (Eigen::Index i = 0; i < b.eps_s.size(); ++i) b.eps_s.data()[i] = static_cast<S>(rng_eps_.normal01());
      b.eps_t.resize(b.target_idx.size(), dz);
      for (Eigen::Index i = 0; i < b.eps_t.size(); ++i) b.eps_t.data()[i] = static_cast<S>(rng_eps_.normal01());
    }
    return b;
  }

  /// Forward pass over one step batch; fills the per-term breakdown.
  /// With do_backward, accumulates all parameter gradients (callers zero
  /// them first) for exactly the composed total.
  EpochMetrics compute_losses(const StepBatch<S>& b, bool do_backward) {
    EpochMetrics out;
    const auto& w = cfg_.weights;
    const S lambda1 = static_cast<S>(w.lambda1);
    const S lambda2 = static_cast<S>(w.lambda2);
    const S beta = static_cast<S>(w.beta);
    const S alpha_eff = soft_active() ? static_cast<S>(w.alpha) : S(0);

    // ---- forward, target branch
    std::vector<int> yt;
    for (int idx : b.target_idx) yt.push_back(ds_.target_train.labels[idx]);
    nn::Mat<S> imgs(b.target_idx.size(), train_images_.cols());
    for (std::size_t i = 0; i < b.target_idx.size(); ++i) imgs.row(i) = train_images_.row(b.target_idx[i]);

    auto& ienc = model_->image_encoder();
    auto& bneck_t = model_->bottleneck_target();
    auto& proj_t = model_->projection_target();
    auto& clf = model_->classifier();

    nn::Mat<S> xt = ienc.forward(imgs, do_backward);
    tais::BottleneckOut<S> bo_t = bneck_t.forward(xt);
    nn::Mat<S> zt = vib_active() ? tais::reparameterize(bo_t.mu, bo_t.sigma, b.eps_t) : bo_t.mu;
    // Common-space rows live on the unit sphere: the linear projections do
    // not pin the scale, and the raw divergence terms (quartic in the norm
    // through the dissimilarity part) are otherwise minimized by collapsing
    // U; normalization makes the alignment gradients purely tangential.
    nn::Mat<S> ut_raw = proj_t.forward(zt);
    nn::Mat<S> ut = nn::normalize_rows(ut_raw);
    nn::Mat<S> logits_t = clf.forward(ut);
    nn::Mat<S> probs_t = nn::softmax_rows(logits_t);

    // ---- forward, source branch
    std::vector<int> ys;
    std::vector<const TypedGraph<S>*> graphs;
    nn::Mat<S> xs, zs, us_raw, us, logits_s, probs_s;
    tais::BottleneckOut<S> bo_s;
    auto& genc = model_->graph_encoder();
    auto& bneck_s = model_->bottleneck_source();
    auto& proj_s = model_->projection_source();
    if (uses_source()) {
      for (int idx : b.source_idx) {
        ys.push_back(source_labels_[idx]);
        graphs.push_back(&source_graphs_[idx]);
      }
      xs = genc.forward(graphs, do_backward);
      bo_s = bneck_s.forward(xs);
      zs = vib_active() ? tais::reparameterize(bo_s.mu, bo_s.sigma, b.eps_s) : bo_s.mu;
      us_raw = proj_s.forward(zs);
      us = nn::normalize_rows(us_raw);
      logits_s = clf.forward(us);
      probs_s = nn::softmax_rows(logits_s);
    }

    // ---- losses
    out.ce_t = static_cast<double>(nn::cross_entropy(logits_t, yt));
    if (uses_source()) {
      out.sup_ce = 0.5 * (static_cast<double>(nn::cross_entropy(logits_s, ys)) + out.ce_t);
      if (vib_active()) {
        out.kl = 0.5 * (static_cast<double>(tais::kl_to_prior_rows(bo_s.mu, bo_s.sigma).sum()) / ys.size() +
                        static_cast<double>(tais::kl_to_prior_rows(bo_t.mu, bo_t.sigma).sum()) / yt.size());
      }
      out.tais = out.sup_ce + static_cast<double>(beta) * out.kl;
    }

    std::vector<int> y_all = ys;
    y_all.insert(y_all.end(), yt.begin(), yt.end());
    if (mdd_active()) out.mdd = static_cast<double>(tgkt::mdd_loss(us, ut, y_all));
    if (cfg_.variant == Variant::mmd_baseline) out.align = static_cast<double>(mmd_baseline_loss(us, ut));
    if (cfg_.variant == Variant::coral_baseline) out.align = static_cast<double>(coral_baseline_loss(us, ut));

    if (soft_active()) out.soft = static_cast<double>(crkt::soft_loss(logits_t, yt, bank_));
    out.crkt = (1.0 - static_cast<double>(alpha_eff)) * out.ce_t + static_cast<double>(alpha_eff) * out.soft;

    if (cfg_.variant == Variant::target_only) {
      out.total = out.crkt;
    } else {
      out.total = static_cast<double>(lambda1) * out.tais +
                  static_cast<double>(lambda2) * (mdd_active() ? out.mdd : out.align) + out.crkt;
    }

    if (!std::isfinite(out.total))
      throw std::runtime_error("training diverged: non-finite total loss at epoch " + std::to_string(epoch_));

    if (!do_backward) return out;

    // ---- backward
    const S sup_scale = uses_source() ? lambda1 * S(0.5) : S(0);
    nn::Mat<S> dlogits_t = nn::cross_entropy_backward(probs_t, yt, (S(1) - alpha_eff) + sup_scale);
    if (soft_active()) dlogits_t += crkt::soft_loss_backward(logits_t, yt, bank_, alpha_eff);
    nn::Mat<S> dut = clf.backward(ut, dlogits_t);

    nn::Mat<S> dus;
    if (uses_source()) {
      nn::Mat<S> dlogits_s = nn::cross_entropy_backward(probs_s, ys, sup_scale);
      dus = clf.backward(us, dlogits_s);
    }

    if (mdd_active()) {
      auto [g_us, g_ut] = tgkt::mdd_backward(us, ut, y_all, lambda2);
      dus += g_us;
      dut += g_ut;
    } else if (cfg_.variant == Variant::mmd_baseline) {
      auto [g_us, g_ut] = mmd_baseline_backward(us, ut, lambda2);
      dus += g_us;
      dut += g_ut;
    } else if (cfg_.variant == Variant::coral_baseline) {
      auto [g_us, g_ut] = coral_baseline_backward(us, ut, lambda2);
      dus += g_us;
      dut += g_ut;
    }

    // target branch backward
    {
      nn::Mat<S> dut_raw = nn::normalize_rows_backward(ut_raw, ut, dut);
      nn::Mat<S> dzt = proj_t.backward(zt, dut_raw);
      nn::Mat<S> dmu = dzt;
      nn::Mat<S> dsigma = nn::Mat<S>::Zero(bo_t.sigma.rows(), bo_t.sigma.cols());
      if (vib_active()) {
        dsigma = (dzt.array() * b.eps_t.array()).matrix();
        auto [kmu, ksig] = tais::kl_backward(bo_t.mu, bo_t.sigma, lambda1 * beta * S(0.5));
        dmu += kmu;
        dsigma += ksig;
      }
      nn::Mat<S> dxt = bneck_t.backward(bo_t, dmu, dsigma);
      ienc.backward(dxt);
    }

    // source branch backward
    if (uses_source()) {
      nn::Mat<S> dus_raw = nn::normalize_rows_backward(us_raw, us, dus);
      nn::Mat<S> dzs = proj_s.backward(zs, dus_raw);
      nn::Mat<S> dmu = dzs;
      nn::Mat<S> dsigma = nn::Mat<S>::Zero(bo_s.sigma.rows(), bo_s.sigma.cols());
      if (vib_active()) {
        dsigma = (dzs.array() * b.eps_s.array()).matrix();
        auto [kmu, ksig] = tais::kl_backward(bo_s.mu, bo_s.sigma, lambda1 * beta * S(0.5));
        dmu += kmu;
        dsigma += ksig;
      }
      nn::Mat<S> dxs = bneck_s.backward(bo_s, dmu, dsigma);
      genc.backward(graphs, dxs);
    }
    return out;
  }

  /// Deterministic inference features for source records (mean path).
  nn::Mat<S> source_common_features(const std::vector<int>& indices) {
    nn::Mat<S> out(indices.size(), cfg_.common_dim);
    constexpr int kChunk = 128;
    for (std::size_t at = 0; at < indices.size(); at += kChunk) {
      const std::size_t n = std::min<std::size_t>(kChunk, indices.size() - at);
      std::vector<const TypedGraph<S>*> graphs;
      for (std::size_t i = 0; i < n; ++i) graphs.push_back(&source_graphs_[indices[at + i]]);
      nn::Mat<S> x = model_->graph_encoder().forward(graphs, false);
      auto bo = model_->bottleneck_source().forward(x);
      out.middleRows(at, n) = nn::normalize_rows(nn::Mat<S>(model_->projection_source().forward(bo.mu)));
    }
    return out;
  }

  /// Deterministic inference features for a stack of images (mean path).
  nn::Mat<S> image_common_features(const nn::Mat<S>& images) {
    nn::Mat<S> out(images.rows(), cfg_.common_dim);
    constexpr int kChunk = 64;
    for (Eigen::Index at = 0; at < images.rows(); at += kChunk) {
      const Eigen::Index n = std::min<Eigen::Index>(kChunk, images.rows() - at);
      nn::Mat<S> x = model_->image_encoder().forward(images.middleRows(at, n), false);
      auto bo = model_->bottleneck_target().forward(x);
      out.middleRows(at, n) = nn::normalize_rows(nn::Mat<S>(model_->projection_target().forward(bo.mu)));
    }
    return out;
  }

  const nn::Mat<S>& train_images() const { return train_images_; }
  const nn::Mat<S>& test_images() const { return test_images_; }

  /// Recomputes the per-class soft labels over the full source set.
  void recompute_bank() {
    std::vector<int> all(ds_.source.size());
    std::iota(all.begin(), all.end(), 0);
    nn::Mat<S> u = source_common_features(all);
    nn::Mat<S> logits = model_->classifier().forward(u);
    bank_ = crkt::compute_soft_labels(logits, source_labels_, ds_.manifest.num_classes, epoch_);
  }

  /// Target-domain evaluation on the held-out test split.
  EvalResult evaluate() {
    const auto& labels = ds_.target_test.labels;
    if (labels.empty()) throw std::invalid_argument("evaluate: empty test split");
    const int K = ds_.manifest.num_classes;
    EvalResult res;
    res.confusion = Eigen::MatrixXi::Zero(K, K);
    nn::Mat<S> u = image_common_features(test_images_);
    nn::Mat<S> logits = model_->classifier().forward(u);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index pred;
      logits.row(i).maxCoeff(&pred);
      res.confusion(labels[i], static_cast<int>(pred)) += 1;
    }
    res.per_class.resize(K, 0.0);
    long correct = 0;
    for (int k = 0; k < K; ++k) {
      const long row_total = res.confusion.row(k).sum();
      res.per_class[k] = row_total > 0 ? static_cast<double>(res.confusion(k, k)) / row_total : 0.0;
      correct += res.confusion(k, k);
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    return res;
  }

  /// Runs the remaining epochs (from the current epoch counter), writing
  /// run artifacts when out_dir is set. Evaluation runs every eval_every
  /// epochs and always after the last one.
  TrainResult train() {
    TrainResult result;
    std::ofstream metrics_out;
    if (!cfg_.out_dir.empty()) {
      prepare_out_dir();
      metrics_out.open(std::filesystem::path(cfg_.out_dir) / "metrics.jsonl", std::ios::app);
    }

    const int steps = steps_per_epoch();
    for (; epoch_ < cfg_.epochs; ++epoch_) {
      if (soft_active()) recompute_bank();
      if (uses_source()) source_sampler_.epoch_begin(rng_batch_);
      target_sampler_.epoch_begin(rng_batch_);

      EpochMetrics mean;
      mean.epoch = epoch_;
      for (int s = 0; s < steps; ++s) {
        StepBatch<S> b = sample_batch();
        registry_.zero_grads();
        EpochMetrics m = compute_losses(b, true);
        opt_.step(registry_);
        mean.total += m.total;
        mean.tais += m.tais;
        mean.mdd += m.mdd;
        mean.crkt += m.crkt;
        mean.sup_ce += m.sup_ce;
        mean.kl += m.kl;
        mean.ce_t += m.ce_t;
        mean.soft += m.soft;
        mean.align += m.align;
      }
      const double inv = 1.0 / steps;
      mean.total *= inv;
      mean.tais *= inv;
      mean.mdd *= inv;
      mean.crkt *= inv;
      mean.sup_ce *= inv;
      mean.kl *= inv;
      mean.ce_t *= inv;
      mean.soft *= inv;
      mean.align *= inv;

      const bool do_eval = ((epoch_ + 1) % std::max(1, cfg_.eval_every) == 0) || (epoch_ + 1 == cfg_.epochs);
      if (do_eval) mean.accuracy = evaluate().accuracy;
      result.history.push_back(mean);
      if (metrics_out) metrics_out << metrics_record(mean).dump() << "\n";
    }

    result.final_eval = evaluate();
    result.replacement_sampling = replacement_used_;
    if (!cfg_.out_dir.empty()) {
      write_confusion(result.final_eval);
      save_checkpoint(std::filesystem::path(cfg_.out_dir) / "checkpoint.bin");
    }
    if (replacement_used_)
      std::cerr << "[mhkt] warning: pool smaller than batch size; sampled with replacement\n";
    return result;
  }

  nlohmann::json resolved_config() const {
    nlohmann::json j;
    j["labeled_per_class"] = cfg_.labeled_per_class;
    j["labeled_pool_size"] = static_cast<int>(labeled_idx_.size());
    j["batch"] = cfg_.batch;
    j["epochs"] = cfg_.epochs;
    j["learning_rate"] = cfg_.learning_rate;
    j["seed"] = cfg_.seed;
    j["variant"] = variant_name(cfg_.variant);
    j["toggles"] = {{"tais", cfg_.toggles.tais}, {"tgkt", cfg_.toggles.tgkt}, {"crkt", cfg_.toggles.crkt}};
    j["weights"] = {{"lambda1", cfg_.weights.lambda1},
                    {"lambda2", cfg_.weights.lambda2},
                    {"beta", cfg_.weights.beta},
                    {"alpha", cfg_.weights.alpha}};
    j["eval_every"] = cfg_.eval_every;
    j["steps_per_epoch"] = steps_per_epoch();
    j["knn_k"] = cfg_.knn_k;
    j["sesf_dim"] = cfg_.sesf_dim;
    j["latent_dim"] = cfg_.latent_dim;
    j["common_dim"] = cfg_.common_dim;
    j["graph_hidden"] = cfg_.graph_hidden;
    j["graph_layers"] = cfg_.graph_layers;
    j["bottleneck_hidden"] = cfg_.bottleneck_hidden;
    j["image_channels"] = cfg_.image_channels;
    j["image_final_channels"] = cfg_.image_final_channels;
    j["image_final_kernel"] = cfg_.image_final_kernel;
    j["precision"] = detail::scalar_tag<S>();
    j["replacement_sampling"] = replacement_used_;
    return j;
  }

  void save_checkpoint(const std::filesystem::path& path) {
    nlohmann::json header;
    header["format"] = "mhkt-checkpoint";
    header["version"] = 1;
    header["scalar"] = detail::scalar_tag<S>();
    header["epoch"] = epoch_;
    header["adam_t"] = opt_.step_count();
    header["rng_batch"] = rng_batch_.save_state();
    header["rng_eps"] = rng_eps_.save_state();
    header["bank_stamp"] = bank_.epoch_stamp;
    {
      nlohmann::json rows = nlohmann::json::array();
      for (Eigen::Index r = 0; r < bank_.q.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < bank_.q.cols(); ++c) row.push_back(static_cast<double>(bank_.q(r, c)));
        rows.push_back(std::move(row));
      }
      header["bank"] = std::move(rows);
    }
    nlohmann::json params = nlohmann::json::array();
    for (const auto& ref : registry_.refs())
      params.push_back({{"name", ref.name}, {"rows", ref.value->rows()}, {"cols", ref.value->cols()}});
    header["params"] = std::move(params);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot write " + path.string());
    const std::string head = header.dump();
    os.write("MHKTCKPT", 8);
    detail::write_u64_le(os, head.size());
    os.write(head.data(), static_cast<std::streamsize>(head.size()));
    auto write_mat = [&os](const nn::Mat<S>& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        if constexpr (sizeof(S) == 4) {
          std::uint32_t bits;
          std::memcpy(&bits, &m.data()[i], 4);
          char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                       static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
          os.write(b, 4);
        } else {
          std::uint64_t bits;
          std::memcpy(&bits, &m.data()[i], 8);
          detail::write_u64_le(os, bits);
        }
      }
    };
    for (const auto& ref : registry_.refs()) write_mat(*ref.value);
    for (const auto& m : opt_.moment1()) write_mat(m);
    for (const auto& m : opt_.moment2()) write_mat(m);
  }

  void load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (std::string(magic, 8) != "MHKTCKPT") throw std::runtime_error("load_checkpoint: bad magic");
    const std::uint64_t head_len = detail::read_u64_le(is);
    std::string head(head_len, '\0');
    is.read(head.data(), static_cast<std::streamsize>(head_len));
    const nlohmann::json header = nlohmann::json::parse(head);
    if (header.at("scalar").get<std::string>() != detail::scalar_tag<S>())
      throw std::runtime_error("load_checkpoint: scalar type mismatch");

    const auto params = header.at("params");
    const auto& refs = registry_.refs();
    if (params.size() != refs.size()) throw std::runtime_error("load_checkpoint: parameter list mismatch");
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (params[i].at("name").get<std::string>() != refs[i].name ||
          params[i].at("rows").get<Eigen::Index>() != refs[i].value->rows() ||
          params[i].at("cols").get<Eigen::Index>() != refs[i].value->cols())
        throw std::runtime_error("load_checkpoint: shape mismatch at " + refs[i].name);
    }

    epoch_ = header.at("epoch").get<int>();
    opt_.set_step_count(header.at("adam_t").get<long>());
    rng_batch_.load_state(header.at("rng_batch").get<std::string>());
    rng_eps_.load_state(header.at("rng_eps").get<std::string>());
    bank_.epoch_stamp = header.at("bank_stamp").get<int>();
    const auto bank_rows = header.at("bank");
    bank_.q.resize(bank_rows.size(), bank_rows.empty() ? 0 : bank_rows[0].size());
    for (Eigen::Index r = 0; r < bank_.q.rows(); ++r)
      for (Eigen::Index c = 0; c < bank_.q.cols(); ++c) bank_.q(r, c) = static_cast<S>(bank_rows[r][c].get<double>());

    auto read_mat = [&is](nn::Mat<S>& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        if constexpr (sizeof(S) == 4) {
          unsigned char b[4];
          is.read(reinterpret_cast<char*>(b), 4);
          std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
          std::memcpy(&m.data()[i], &bits, 4);
        } else {
          std::uint64_t bits = detail::read_u64_le(is);
          std::memcpy(&m.data()[i], &bits, 8);
        }
      }
    };
    for (const auto& ref : registry_.refs()) read_mat(*ref.value);
    for (auto& m : opt_.moment1()) read_mat(m);
    for (auto& m : opt_.moment2()) read_mat(m);
    if (!is) throw std::runtime_error("load_checkpoint: truncated blob");
  }

 private:
  std::vector<int> select_labeled_subset() const {
    const int K = ds_.manifest.num_classes;
    std::vector<std::vector<int>> by_class(K);
    for (std::size_t i = 0; i < ds_.target_train.labels.size(); ++i)
      by_class[ds_.target_train.labels[i]].push_back(static_cast<int>(i));
    std::vector<int> picked;
    for (int c = 0; c < K; ++c) {
      auto idx = by_class[c];
      if (cfg_.labeled_per_class >= 0) {
        if (cfg_.labeled_per_class > static_cast<int>(idx.size()))
          throw std::invalid_argument("labeled_per_class exceeds the available target samples of class " +
                                      std::to_string(c));
        Rng rng(derive_seed(cfg_.seed, "labeled_subset", static_cast<std::uint64_t>(c)));
        rng.shuffle(idx);
        idx.resize(cfg_.labeled_per_class);
      }
      picked.insert(picked.end(), idx.begin(), idx.end());
    }
    std::sort(picked.begin(), picked.end());
    return picked;
  }

  void prepare_out_dir() {
    namespace fs = std::filesystem;
    const fs::path dir(cfg_.out_dir);
    if (fs::exists(dir / "config.json") && !cfg_.force)
      throw std::runtime_error("run directory " + dir.string() + " already holds a run (use force)");
    fs::create_directories(dir);
    if (cfg_.force) {
      fs::remove(dir / "metrics.jsonl");
    }
    std::ofstream os(dir / "config.json");
    os << resolved_config().dump(2) << "\n";
  }

  nlohmann::json metrics_record(const EpochMetrics& m) const {
    nlohmann::json j;
    j["epoch"] = m.epoch;
    j["loss_total"] = m.total;
    j["loss_ce_t"] = m.ce_t;
    if (uses_source()) {
      j["loss_tais"] = m.tais;
      j["loss_sup_ce"] = m.sup_ce;
      j["loss_kl"] = m.kl;
    }
    if (cfg_.variant == Variant::mhkt || cfg_.variant == Variant::source_finetune) {
      j["loss_mdd"] = m.mdd;
      j["loss_crkt"] = m.crkt;
      j["loss_soft"] = m.soft;
    }
    if (cfg_.variant == Variant::mmd_baseline || cfg_.variant == Variant::coral_baseline) j["loss_align"] = m.align;
    if (m.accuracy >= 0) {
      j["accuracy"] = m.accuracy;
    } else {
      j["accuracy"] = nullptr;
    }
    return j;
  }

  void write_confusion(const EvalResult& res) const {
    std::ofstream os(std::filesystem::path(cfg_.out_dir) / "confusion.csv");
    const int K = static_cast<int>(res.confusion.rows());
    os << "true_class";
    for (int c = 0; c < K; ++c) os << ",pred_" << c;
    os << "\n";
    for (int r = 0; r < K; ++r) {
      os << r;
      for (int c = 0; c < K; ++c) os << "," << res.confusion(r, c);
      os << "\n";
    }
  }

  const Dataset& ds_;
  TrainConfig cfg_;
  std::unique_ptr<MhktModel<S>> model_;
  nn::Registry<S> registry_;
  nn::Adam<S> opt_;

  std::vector<TypedGraph<S>> source_graphs_;
  std::vector<int> source_labels_;
  nn::Mat<S> train_images_, test_images_;
  std::vector<int> labeled_idx_;

  BalancedSampler source_sampler_, target_sampler_;
  Rng rng_batch_, rng_eps_;
  crkt::SoftLabelBank<S> bank_;
  int epoch_ = 0;
  bool replacement_used_ = false;
};

}  // namespace mhkt

#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "mhkt/graph.hpp"
#include "mhkt/nn.hpp"

namespace mhkt {

/// Graph sample pre-cast to the training scalar type.
template <class S>
struct TypedGraph {
  nn::Mat<S> features;  // n x 7
  nn::Mat<S> agg;       // n x n row-stochastic aggregation

  static TypedGraph from(const Graph& g) {
    TypedGraph t;
    t.features = g.node_features.template cast<S>();
    t.agg = aggregation_matrix(g).template cast<S>();
    return t;
  }
};

struct GraphEncoderConfig {
  int in_dim = kGraphFeatureDim;
  int hidden = 64;
  int layers = 3;
  int out_dim = 128;  // SESF width
};

/// Message-passing encoder: per layer, neighbour-mean aggregation followed by
/// a shared linear map and ReLU; global mean pooling; linear head to out_dim.
/// Mean aggregation and pooling make the output node-permutation invariant.
template <class S>
class GraphEncoder {
 public:
  GraphEncoder() = default;
  GraphEncoder(const GraphEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    int in = cfg.in_dim;
    for (int l = 0; l < cfg.layers; ++l) {
      layers_.emplace_back(in, cfg.hidden, true, rng);
      in = cfg.hidden;
    }
    head_ = nn::Dense<S>(in, cfg.out_dim, true, rng);
  }

  const GraphEncoderConfig& config() const { return cfg_; }

  nn::Mat<S> forward(const std::vector<const TypedGraph<S>*>& batch, bool keep_ctx) {
    const int n = static_cast<int>(batch.size());
    nn::Mat<S> out(n, cfg_.out_dim);
    if (keep_ctx) ctx_.assign(n, {});
    for (int s = 0; s < n; ++s) {
      const TypedGraph<S>& g = *batch[s];
      if (!g.features.allFinite()) throw std::invalid_argument("GraphEncoder: non-finite node features");
      nn::Mat<S> h = g.features;
      SampleCtx c;
      for (auto& layer : layers_) {
        nn::Mat<S> a = g.agg * h;                    // neighbour mean
        nn::Mat<S> y = nn::relu(layer.forward(a));   // linear + nonlinearity
        if (keep_ctx) {
          c.agg_in.push_back(a);
          c.act.push_back(y);
        }
        h = std::move(y);
      }
      nn::Mat<S> pooled = h.colwise().mean();  // 1 x hidden
      if (keep_ctx) {
        c.pooled = pooled;
        ctx_[s] = std::move(c);
      }
      out.row(s) = head_.forward(pooled).row(0);
    }
    return out;
  }

  /// Backward for the batch of the last forward(_, true).
  void backward(const std::vector<const TypedGraph<S>*>& batch, const nn::Mat<S>& d_out) {
    const int n = static_cast<int>(batch.size());
    if (static_cast<int>(ctx_.size()) != n) throw std::logic_error("GraphEncoder: backward without forward context");
    for (int s = 0; s < n; ++s) {
      const TypedGraph<S>& g = *batch[s];
      SampleCtx& c = ctx_[s];
      nn::Mat<S> d_pooled = head_.backward(c.pooled, d_out.row(s));
      const Eigen::Index nodes = g.features.rows();
      nn::Mat<S> dh = nn::Mat<S>::Zero(nodes, layers_.back().out_dim());
      dh.rowwise() += d_pooled.row(0) / static_cast<S>(nodes);
      for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
        nn::Mat<S> dz = nn::relu_backward(c.act[l], dh);
        nn::Mat<S> da = layers_[l].backward(c.agg_in[l], dz);
        dh = g.agg.transpose() * da;
      }
    }
    ctx_.clear();
  }

  void register_params(nn::Registry<S>& reg, const std::string& prefix) {
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].register_params(reg, prefix + ".mp" + std::to_string(l));
    head_.register_params(reg, prefix + ".head");
  }

 private:
  struct SampleCtx {
    std::vector<nn::Mat<S>> agg_in;  // aggregated inputs per layer
    std::vector<nn::Mat<S>> act;     // activations per layer
    nn::Mat<S> pooled;
  };

  GraphEncoderConfig cfg_;
  std::vector<nn::Dense<S>> layers_;
  nn::Dense<S> head_;
  std::vector<SampleCtx> ctx_;
};

struct ImageEncoderConfig {
  int in_h = 128, in_w = 128;
  std::vector<int> channels = {16, 32, 64, 64};  // stride-2 stages
  int final_channels = 64;
  int final_kernel = 2;  // stride-1 valid conv before the flatten

  /// The production configuration flattens to 7*7*64 = 3136.
  static ImageEncoderConfig standard() { return {}; }
};

/// All-convolutional feature extractor; no fully connected layers before the
/// flatten. Four stride-2 3x3 stages then a stride-1 valid conv.
template <class S>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const ImageEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    int h = cfg.in_h, w = cfg.in_w, in_ch = 1;
    for (int ch : cfg.channels) {
      nn::ConvSpec spec{in_ch, ch, 3, 2, 1, h, w};
      convs_.emplace_back(spec, rng);
      h = spec.out_h();
      w = spec.out_w();
      in_ch = ch;
    }
    nn::ConvSpec last{in_ch, cfg.final_channels, cfg.final_kernel, 1, 0, h, w};
    if (last.out_h() < 1 || last.out_w() < 1) throw std::invalid_argument("ImageEncoder: input too small");
    convs_.emplace_back(last, rng);
    out_dim_ = convs_.back().out_size();
  }

  Eigen::Index out_dim() const { return out_dim_; }
  Eigen::Index in_dim() const { return static_cast<Eigen::Index>(cfg_.in_h) * cfg_.in_w; }
  const ImageEncoderConfig& config() const { return cfg_; }

  nn::Mat<S> forward(const nn::Mat<S>& images, bool keep_ctx) {
    if (images.cols() != in_dim()) throw std::invalid_argument("ImageEncoder: image shape mismatch");
    nn::Mat<S> h = images;
    if (keep_ctx) acts_.clear();
    for (auto& conv : convs_) {
      h = nn::relu(conv.forward(h, keep_ctx));
      if (keep_ctx) acts_.push_back(h);
    }
    return h;
  }

  void backward(const nn::Mat<S>& d_out) {
    if (acts_.size() != convs_.size()) throw std::logic_error("ImageEncoder: backward without forward context");
    nn::Mat<S> d = d_out;
    for (int l = static_cast<int>(convs_.size()) - 1; l >= 0; --l) {
      d = nn::relu_backward(acts_[l], d);
      d = convs_[l].backward(d);
    }
    acts_.clear();
  }

  void register_params(nn::Registry<S>& reg, const std::string& prefix) {
    for (std::size_t l = 0; l < convs_.size(); ++l) convs_[l].register_params(reg, prefix + ".conv" + std::to_string(l));
  }

 private:
  ImageEncoderConfig cfg_;
  std::vector<nn::Conv2d<S>> convs_;
  std::vector<nn::Mat<S>> acts_;
  Eigen::Index out_dim_ = 0;
};

}  // namespace mhkt

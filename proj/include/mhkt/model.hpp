#pragma once

#include <memory>
#include <string>

#include "mhkt/encoders.hpp"
#include "mhkt/nn.hpp"
#include "mhkt/tais.hpp"

namespace mhkt {

struct ModelConfig {
  GraphEncoderConfig graph_enc;
  ImageEncoderConfig image_enc;
  int latent_dim = 64;      // d_z, shared by both domains
  int common_dim = 128;     // d_c
  int num_classes = 3;
  int bottleneck_hidden = 128;
};

/// The full two-branch network: per-domain encoder + information selector +
/// linear projection into the common space, and one shared classifier.
/// Non-copyable; the registry hands out raw views of the parameter tensors.
template <class S>
class MhktModel {
 public:
  MhktModel(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    Rng rng(derive_seed(init_seed, "model_init"));
    graph_enc_ = std::make_unique<GraphEncoder<S>>(cfg.graph_enc, rng);
    image_enc_ = std::make_unique<ImageEncoder<S>>(cfg.image_enc, rng);
    bneck_s_ = std::make_unique<tais::Bottleneck<S>>(cfg.graph_enc.out_dim, cfg.bottleneck_hidden, cfg.latent_dim, rng);
    bneck_t_ = std::make_unique<tais::Bottleneck<S>>(image_enc_->out_dim(), cfg.bottleneck_hidden, cfg.latent_dim, rng);
    proj_s_ = std::make_unique<nn::Dense<S>>(cfg.latent_dim, cfg.common_dim, false, rng);
    proj_t_ = std::make_unique<nn::Dense<S>>(cfg.latent_dim, cfg.common_dim, false, rng);
    classifier_ = std::make_unique<nn::Dense<S>>(cfg.common_dim, cfg.num_classes, true, rng);
  }

  MhktModel(const MhktModel&) = delete;
  MhktModel& operator=(const MhktModel&) = delete;

  const ModelConfig& config() const { return cfg_; }

  nn::Registry<S> make_registry() {
    nn::Registry<S> reg;
    graph_enc_->register_params(reg, "graph_enc");
    image_enc_->register_params(reg, "image_enc");
    bneck_s_->register_params(reg, "bneck_s");
    bneck_t_->register_params(reg, "bneck_t");
    proj_s_->register_params(reg, "proj_s");
    proj_t_->register_params(reg, "proj_t");
    classifier_->register_params(reg, "classifier");
    return reg;
  }

  GraphEncoder<S>& graph_encoder() { return *graph_enc_; }
  ImageEncoder<S>& image_encoder() { return *image_enc_; }
  tais::Bottleneck<S>& bottleneck_source() { return *bneck_s_; }
  tais::Bottleneck<S>& bottleneck_target() { return *bneck_t_; }
  nn::Dense<S>& projection_source() { return *proj_s_; }
  nn::Dense<S>& projection_target() { return *proj_t_; }
  nn::Dense<S>& classifier() { return *classifier_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<GraphEncoder<S>> graph_enc_;
  std::unique_ptr<ImageEncoder<S>> image_enc_;
  std::unique_ptr<tais::Bottleneck<S>> bneck_s_, bneck_t_;
  std::unique_ptr<nn::Dense<S>> proj_s_, proj_t_;
  std::unique_ptr<nn::Dense<S>> classifier_;
};

}  // namespace mhkt

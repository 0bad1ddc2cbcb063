#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mhkt/rng.hpp"

namespace mhkt::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Named view of one parameter tensor and its gradient accumulator.
template <class S>
struct ParamRef {
  std::string name;
  Mat<S>* value;
  Mat<S>* grad;
};

template <class S>
class Registry {
 public:
  void add(std::string name, Mat<S>* value, Mat<S>* grad) { refs_.push_back({std::move(name), value, grad}); }

  const std::vector<ParamRef<S>>& refs() const { return refs_; }

  void zero_grads() {
    for (auto& r : refs_) r.grad->setZero();
  }

  Eigen::Index count() const {
    Eigen::Index n = 0;
    for (const auto& r : refs_) n += r.value->size();
    return n;
  }

  Vec<S> flatten_values() const { return flatten([](const ParamRef<S>& r) { return r.value; }); }
  Vec<S> flatten_grads() const { return flatten([](const ParamRef<S>& r) { return r.grad; }); }

  void set_values(const Vec<S>& flat) {
    Eigen::Index at = 0;
    for (auto& r : refs_) {
      for (Eigen::Index i = 0; i < r.value->size(); ++i) r.value->data()[i] = flat(at + i);
      at += r.value->size();
    }
  }

 private:
  template <class F>
  Vec<S> flatten(F pick) const {
    Vec<S> flat(count());
    Eigen::Index at = 0;
    for (const auto& r : refs_) {
      const Mat<S>* m = pick(r);
      for (Eigen::Index i = 0; i < m->size(); ++i) flat(at + i) = m->data()[i];
      at += m->size();
    }
    return flat;
  }

  std::vector<ParamRef<S>> refs_;
};

/// Uniform fan-in initialization: U(-sqrt(3/fan_in), +sqrt(3/fan_in)).
template <class S>
void init_uniform_fan_in(Mat<S>& w, Eigen::Index fan_in, Rng& rng) {
  const double a = std::sqrt(3.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.uniform(-a, a));
}

/// Fully connected layer, y = x W^T (+ b). Backward accumulates into the
/// gradient buffers; callers zero them through the registry.
template <class S>
class Dense {
 public:
  Dense() = default;
  Dense(Eigen::Index in, Eigen::Index out, bool bias, Rng& rng) : has_bias_(bias) {
    w_.resize(out, in);
    gw_.setZero(out, in);
    init_uniform_fan_in(w_, in, rng);
    if (bias) {
      b_.setZero(1, out);
      gb_.setZero(1, out);
    }
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = x * w_.transpose();
    if (has_bias_) y.rowwise() += b_.row(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy) {
    gw_.noalias() += dy.transpose() * x;
    if (has_bias_) gb_.row(0) += dy.colwise().sum();
    return dy * w_;
  }

  void register_params(Registry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".W", &w_, &gw_);
    if (has_bias_) reg.add(prefix + ".b", &b_, &gb_);
  }

  Eigen::Index in_dim() const { return w_.cols(); }
  Eigen::Index out_dim() const { return w_.rows(); }
  Mat<S>& weight() { return w_; }
  const Mat<S>& weight() const { return w_; }
  Mat<S>& bias() { return b_; }

 private:
  Mat<S> w_, gw_;
  Mat<S> b_, gb_;
  bool has_bias_ = true;
};

template <class S>
Mat<S> relu(const Mat<S>& x) {
  return x.cwiseMax(S(0));
}

/// Gradient through ReLU given the layer output (mask y > 0).
template <class S>
Mat<S> relu_backward(const Mat<S>& y, const Mat<S>& dy) {
  return (y.array() > S(0)).template cast<S>() * dy.array();
}

struct ConvSpec {
  int in_ch = 1, out_ch = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 0;
  int in_h = 0, in_w = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

/// 2-D convolution via im2col + GEMM. Batch rows hold C*H*W planes.
/// forward(x, true) caches the column matrix consumed by the next backward.
template <class S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const ConvSpec& spec, Rng& rng) : spec_(spec) {
    const Eigen::Index fan_in = static_cast<Eigen::Index>(spec.in_ch) * spec.kernel * spec.kernel;
    w_.resize(spec.out_ch, fan_in);
    gw_.setZero(spec.out_ch, fan_in);
    init_uniform_fan_in(w_, fan_in, rng);
    b_.setZero(1, spec.out_ch);
    gb_.setZero(1, spec.out_ch);
  }

  const ConvSpec& spec() const { return spec_; }
  Eigen::Index out_size() const { return static_cast<Eigen::Index>(spec_.out_ch) * spec_.out_h() * spec_.out_w(); }
  Eigen::Index in_size() const { return static_cast<Eigen::Index>(spec_.in_ch) * spec_.in_h * spec_.in_w; }

  Mat<S> forward(const Mat<S>& x, bool keep_ctx) {
    const int n = static_cast<int>(x.rows());
    if (x.cols() != in_size()) throw std::invalid_argument("Conv2d: input size mismatch");
    const int oh = spec_.out_h(), ow = spec_.out_w();
    const Eigen::Index patches = static_cast<Eigen::Index>(n) * oh * ow;

    Mat<S> col(w_.cols(), patches);
    im2col(x, col);
    Mat<S> yall = w_ * col;  // out_ch x patches

    Mat<S> y(n, out_size());
    for (int s = 0; s < n; ++s)
      for (int c = 0; c < spec_.out_ch; ++c)
        for (int p = 0; p < oh * ow; ++p)
          y(s, static_cast<Eigen::Index>(c) * oh * ow + p) =
              yall(c, static_cast<Eigen::Index>(s) * oh * ow + p) + b_(0, c);

    if (keep_ctx) col_ = std::move(col);
    return y;
  }

  /// Requires a preceding forward(x, true) on the same batch.
  Mat<S> backward(const Mat<S>& dy) {
    if (col_.size() == 0) throw std::logic_error("Conv2d: backward without cached forward context");
    const int oh = spec_.out_h(), ow = spec_.out_w();
    const int n = static_cast<int>(dy.rows());

    Mat<S> dyall(spec_.out_ch, static_cast<Eigen::Index>(n) * oh * ow);
    for (int s = 0; s < n; ++s)
      for (int c = 0; c < spec_.out_ch; ++c)
        for (int p = 0; p < oh * ow; ++p)
          dyall(c, static_cast<Eigen::Index>(s) * oh * ow + p) = dy(s, static_cast<Eigen::Index>(c) * oh * ow + p);

    gw_.noalias() += dyall * col_.transpose();
    gb_.row(0) += dyall.rowwise().sum().transpose();

    Mat<S> dcol = w_.transpose() * dyall;
    Mat<S> dx = Mat<S>::Zero(n, in_size());
    col2im(dcol, dx);
    col_.resize(0, 0);
    return dx;
  }

  void register_params(Registry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".W", &w_, &gw_);
    reg.add(prefix + ".b", &b_, &gb_);
  }

 private:
  void im2col(const Mat<S>& x, Mat<S>& col) const {
    const int oh = spec_.out_h(), ow = spec_.out_w();
    const int n = static_cast<int>(x.rows());
    col.setZero();
    for (int s = 0; s < n; ++s) {
      const S* plane = x.data() + static_cast<Eigen::Index>(s) * in_size();
      for (int c = 0; c < spec_.in_ch; ++c) {
        for (int ky = 0; ky < spec_.kernel; ++ky) {
          for (int kx = 0; kx < spec_.kernel; ++kx) {
            const Eigen::Index row = (static_cast<Eigen::Index>(c) * spec_.kernel + ky) * spec_.kernel + kx;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * spec_.stride - spec_.pad + ky;
              if (iy < 0 || iy >= spec_.in_h) continue;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * spec_.stride - spec_.pad + kx;
                if (ix < 0 || ix >= spec_.in_w) continue;
                col(row, (static_cast<Eigen::Index>(s) * oh + oy) * ow + ox) =
                    plane[(static_cast<Eigen::Index>(c) * spec_.in_h + iy) * spec_.in_w + ix];
              }
            }
          }
        }
      }
    }
  }

  void col2im(const Mat<S>& dcol, Mat<S>& dx) const {
    const int oh = spec_.out_h(), ow = spec_.out_w();
    const int n = static_cast<int>(dx.rows());
    for (int s = 0; s < n; ++s) {
      S* plane = dx.data() + static_cast<Eigen::Index>(s) * in_size();
      for (int c = 0; c < spec_.in_ch; ++c) {
        for (int ky = 0; ky < spec_.kernel; ++ky) {
          for (int kx = 0; kx < spec_.kernel; ++kx) {
            const Eigen::Index row = (static_cast<Eigen::Index>(c) * spec_.kernel + ky) * spec_.kernel + kx;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * spec_.stride - spec_.pad + ky;
              if (iy < 0 || iy >= spec_.in_h) continue;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * spec_.stride - spec_.pad + kx;
                if (ix < 0 || ix >= spec_.in_w) continue;
                plane[(static_cast<Eigen::Index>(c) * spec_.in_h + iy) * spec_.in_w + ix] +=
                    dcol(row, (static_cast<Eigen::Index>(s) * oh + oy) * ow + ox);
              }
            }
          }
        }
      }
    }
  }

  ConvSpec spec_;
  Mat<S> w_, gw_, b_, gb_;
  Mat<S> col_;
};

constexpr double kRowNormEps = 1e-12;

/// Per-row L2 normalization onto the unit sphere.
template <class S>
Mat<S> normalize_rows(const Mat<S>& v) {
  Mat<S> out = v;
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    out.row(i) /= std::sqrt(v.row(i).squaredNorm() + static_cast<S>(kRowNormEps));
  return out;
}

/// Gradient through normalize_rows: tangential projection scaled by 1/||v||.
template <class S>
Mat<S> normalize_rows_backward(const Mat<S>& v_raw, const Mat<S>& v_hat, const Mat<S>& g) {
  Mat<S> out(g.rows(), g.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const S inv_norm = S(1) / std::sqrt(v_raw.row(i).squaredNorm() + static_cast<S>(kRowNormEps));
    const S radial = g.row(i).dot(v_hat.row(i));
    out.row(i) = (g.row(i) - radial * v_hat.row(i)) * inv_norm;
  }
  return out;
}

/// Row-wise stable softmax.
template <class S>
Mat<S> softmax_rows(const Mat<S>& logits) {
  Mat<S> p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const S m = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// Mean cross-entropy, -log softmax(logits)[y].
template <class S>
S cross_entropy(const Mat<S>& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw std::invalid_argument("cross_entropy: label count mismatch");
  S total = S(0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= logits.cols()) throw std::out_of_range("cross_entropy: label out of range");
    const S m = logits.row(i).maxCoeff();
    const S lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, y);
  }
  return total / static_cast<S>(logits.rows());
}

/// d(scale * mean CE)/dlogits given precomputed probabilities.
template <class S>
Mat<S> cross_entropy_backward(const Mat<S>& probs, const std::vector<int>& labels, S scale) {
  Mat<S> d = probs;
  const S f = scale / static_cast<S>(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) d(i, labels[i]) -= S(1);
  return d * f;
}

/// Adam optimizer over a registry's parameters.
template <class S>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const Registry<S>& reg, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& r : reg.refs()) {
      m_.push_back(Mat<S>::Zero(r.value->rows(), r.value->cols()));
      v_.push_back(Mat<S>::Zero(r.value->rows(), r.value->cols()));
    }
  }

  void step(const Registry<S>& reg) {
    ++t_;
    const S bc1 = S(1) - static_cast<S>(std::pow(beta1_, t_));
    const S bc2 = S(1) - static_cast<S>(std::pow(beta2_, t_));
    const auto& refs = reg.refs();
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const Mat<S>& g = *refs[i].grad;
      m_[i] = static_cast<S>(beta1_) * m_[i] + (S(1) - static_cast<S>(beta1_)) * g;
      v_[i] = (static_cast<S>(beta2_) * v_[i].array() + (S(1) - static_cast<S>(beta2_)) * g.array().square()).matrix();
      refs[i].value->array() -=
          static_cast<S>(lr_) * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + static_cast<S>(eps_));
    }
  }

  long step_count() const { return t_; }
  double learning_rate() const { return lr_; }

  // checkpoint access
  std::vector<Mat<S>>& moment1() { return m_; }
  std::vector<Mat<S>>& moment2() { return v_; }
  void set_step_count(long t) { t_ = t; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

}  // namespace mhkt::nn

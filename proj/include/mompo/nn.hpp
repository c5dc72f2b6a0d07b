#pragma once

// Small feedforward networks with an explicit backward pass and Adam.
//
// Layer graph: Linear -> [LayerNorm -> tanh] -> (Linear -> ELU)* -> Linear.
// The bracketed normalization replaces the ELU of the first hidden layer when
// enabled. Batches are column-major: one sample per column.

#include "mompo/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mompo::nn {

template <typename Scalar>
class FeedForwardNet {
 public:
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  static constexpr Scalar kNormEpsilon = Scalar(1e-5);

  /// Intermediate values of one batched forward pass.
  struct Tape {
    std::vector<Mat> inputs;  // input of every linear layer
    std::vector<Mat> pre;     // output of every linear layer
    Mat normalized;           // standardized first-layer output
    RowVec inv_std;
  };

  FeedForwardNet() = default;

  explicit FeedForwardNet(std::vector<int> sizes, bool layer_norm_first = false)
      : sizes_(std::move(sizes)), layer_norm_first_(layer_norm_first) {
    if (sizes_.size() < 2) throw ConfigError("network needs at least input and output sizes");
    for (int s : sizes_)
      if (s < 1) throw ConfigError("network layer sizes must be positive");
    if (layer_norm_first_ && sizes_.size() < 3)
      throw ConfigError("layer normalization needs at least one hidden layer");
    params_ = Vec::Zero(static_cast<Eigen::Index>(parameter_count(sizes_, layer_norm_first_)));
    if (layer_norm_first_) norm_gain().setOnes();
  }

  static std::size_t parameter_count(const std::vector<int>& sizes, bool layer_norm_first) {
    std::size_t count = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
      count += static_cast<std::size_t>(sizes[l] + 1) * static_cast<std::size_t>(sizes[l + 1]);
    if (layer_norm_first && sizes.size() >= 3) count += 2 * static_cast<std::size_t>(sizes[1]);
    return count;
  }

  const std::vector<int>& sizes() const { return sizes_; }
  bool layer_norm_first() const { return layer_norm_first_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  Eigen::Index parameter_size() const { return params_.size(); }

  const Vec& parameters() const { return params_; }
  Vec& parameters() { return params_; }
  void set_parameters(const Vec& p) {
    if (p.size() != params_.size())
      throw ConfigError("parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                        std::to_string(params_.size()));
    params_ = p;
  }

  Eigen::Map<Mat> weight(int l) { return {params_.data() + offset(l), sizes_[l + 1], sizes_[l]}; }
  Eigen::Map<const Mat> weight(int l) const {
    return {params_.data() + offset(l), sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Vec> bias(int l) {
    return {params_.data() + offset(l) + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
  }
  Eigen::Map<const Vec> bias(int l) const {
    return {params_.data() + offset(l) + sizes_[l] * sizes_[l + 1], sizes_[l + 1]};
  }
  Eigen::Map<Vec> norm_gain() { return {params_.data() + offset(num_layers()), sizes_[1]}; }
  Eigen::Map<const Vec> norm_gain() const {
    return {params_.data() + offset(num_layers()), sizes_[1]};
  }
  Eigen::Map<Vec> norm_bias() {
    return {params_.data() + offset(num_layers()) + sizes_[1], sizes_[1]};
  }
  Eigen::Map<const Vec> norm_bias() const {
    return {params_.data() + offset(num_layers()) + sizes_[1], sizes_[1]};
  }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero; unit gain.
  template <typename Generator>
  void init_uniform(Generator& rng) {
    for (int l = 0; l < num_layers(); ++l) {
      const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(sizes_[l]));
      std::uniform_real_distribution<double> dist(-static_cast<double>(bound),
                                                   static_cast<double>(bound));
      auto w = weight(l);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(dist(rng));
      bias(l).setZero();
    }
    if (layer_norm_first_) {
      norm_gain().setOnes();
      norm_bias().setZero();
    }
  }

  /// Multiplies the output layer by `s`; s = 0 makes the net output its bias.
  void scale_output_layer(Scalar s) {
    weight(num_layers() - 1) *= s;
    bias(num_layers() - 1) *= s;
  }

  Vec forward(const Vec& input) const {
    Mat batch = input;
    return forward(batch).col(0);
  }

  Mat forward(const Mat& inputs) const {
    Tape tape;
    return forward(inputs, tape);
  }

  Mat forward(const Mat& inputs, Tape& tape) const {
    if (inputs.rows() != input_dim())
      throw ConfigError("network input has " + std::to_string(inputs.rows()) + " rows, expected " +
                        std::to_string(input_dim()));
    const int layers = num_layers();
    tape.inputs.assign(static_cast<std::size_t>(layers), Mat());
    tape.pre.assign(static_cast<std::size_t>(layers), Mat());
    Mat a = inputs;
    for (int l = 0; l < layers; ++l) {
      Mat z = weight(l) * a;
      z.colwise() += bias(l);
      tape.inputs[l] = std::move(a);
      if (l == layers - 1) {
        tape.pre[l] = z;
        return z;
      }
      if (l == 0 && layer_norm_first_) {
        const RowVec mean = z.colwise().mean();
        Mat centered = z.rowwise() - mean;
        const RowVec var = centered.array().square().colwise().mean().matrix();
        tape.inv_std = (var.array() + kNormEpsilon).rsqrt().matrix();
        tape.normalized = centered.array().rowwise() * tape.inv_std.array();
        Mat y = (tape.normalized.array().colwise() * norm_gain().array()).matrix();
        y.colwise() += norm_bias();
        a = y.array().tanh().matrix();
      } else {
        a = z.unaryExpr([](Scalar x) { return x > Scalar(0) ? x : std::expm1(x); });
      }
      tape.pre[l] = std::move(z);
    }
    return a;  // unreachable: the last layer returns above
  }

  /// Gradient of a loss w.r.t. all parameters, given dLoss/dOutput.
  Vec backward(const Tape& tape, const Mat& output_grad) const {
    const int layers = num_layers();
    Vec grad = Vec::Zero(params_.size());
    Mat delta = output_grad;  // gradient w.r.t. pre-activation of layer l
    for (int l = layers - 1; l >= 0; --l) {
      const Mat& input = tape.inputs[l];
      Eigen::Map<Mat>(grad.data() + offset(l), sizes_[l + 1], sizes_[l]) = delta * input.transpose();
      Eigen::Map<Vec>(grad.data() + offset(l) + sizes_[l] * sizes_[l + 1], sizes_[l + 1]) =
          delta.rowwise().sum();
      if (l == 0) break;
      Mat da = weight(l).transpose() * delta;
      const int h = l - 1;
      if (h == 0 && layer_norm_first_) {
        // a = tanh(gain * zhat + bias), zhat = (z - mean) * inv_std
        const Mat& nrm = tape.normalized;
        Mat y = (nrm.array().colwise() * norm_gain().array()).matrix();
        y.colwise() += norm_bias();
        const Mat dy = da.array() * (Scalar(1) - y.array().tanh().square());
        Eigen::Map<Vec>(grad.data() + offset(layers), sizes_[1]) =
            (dy.array() * nrm.array()).rowwise().sum().matrix();
        Eigen::Map<Vec>(grad.data() + offset(layers) + sizes_[1], sizes_[1]) = dy.rowwise().sum();
        const Mat dn = dy.array().colwise() * norm_gain().array();
        const RowVec mean_dn = dn.colwise().mean();
        const RowVec mean_dn_n = (dn.array() * nrm.array()).colwise().mean().matrix();
        Mat centered = dn.rowwise() - mean_dn;
        centered -= (nrm.array().rowwise() * mean_dn_n.array()).matrix();
        delta = centered.array().rowwise() * tape.inv_std.array();
      } else {
        const Mat& z = tape.pre[h];
        delta = da.array() *
                z.unaryExpr([](Scalar x) { return x > Scalar(0) ? Scalar(1) : std::exp(x); }).array();
      }
    }
    return grad;
  }

 private:
  Eigen::Index offset(int layer) const {
    Eigen::Index off = 0;
    for (int l = 0; l < layer; ++l) off += static_cast<Eigen::Index>(sizes_[l] + 1) * sizes_[l + 1];
    return off;
  }

  std::vector<int> sizes_;
  bool layer_norm_first_ = false;
  Vec params_;
};

/// Loss value and parameter gradient. `loss` maps the output batch to
/// {loss, dLoss/dOutput}.
template <typename Scalar, typename LossFn>
std::pair<Scalar, typename FeedForwardNet<Scalar>::Vec> grad(
    const FeedForwardNet<Scalar>& net, const typename FeedForwardNet<Scalar>::Mat& inputs,
    LossFn&& loss) {
  typename FeedForwardNet<Scalar>::Tape tape;
  const auto out = net.forward(inputs, tape);
  auto [value, output_grad] = loss(out);
  if (!std::isfinite(static_cast<double>(value))) throw NumericalError("non-finite loss in grad");
  return {value, net.backward(tape, output_grad)};
}

template <typename Scalar>
struct AdamState {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  long step = 0;
  Vec m;
  Vec v;
  Scalar lr = Scalar(3e-4);
  Scalar epsilon = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);

  static AdamState make(Eigen::Index size, Scalar lr, Scalar epsilon) {
    AdamState s;
    s.m = Vec::Zero(size);
    s.v = Vec::Zero(size);
    s.lr = lr;
    s.epsilon = epsilon;
    return s;
  }
};

/// One bias-corrected Adam descent step, in place.
template <typename Scalar>
void adam_step(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& params,
               const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& grads, AdamState<Scalar>& state) {
  if (grads.size() != params.size()) throw ConfigError("adam_step: gradient size mismatch");
  if (!grads.allFinite()) throw NumericalError("adam_step: non-finite gradient");
  if (state.m.size() != params.size()) {
    state.m = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(params.size());
    state.v = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(params.size());
  }
  ++state.step;
  state.m = state.beta1 * state.m + (Scalar(1) - state.beta1) * grads;
  state.v = state.beta2 * state.v + (Scalar(1) - state.beta2) * grads.cwiseAbs2();
  const Scalar c1 = Scalar(1) - std::pow(state.beta1, static_cast<Scalar>(state.step));
  const Scalar c2 = Scalar(1) - std::pow(state.beta2, static_cast<Scalar>(state.step));
  params.array() -= state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.epsilon);
}

using Net = FeedForwardNet<double>;
using Adam = AdamState<double>;

}  // namespace mompo::nn

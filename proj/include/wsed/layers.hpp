#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "wsed/common.hpp"
#include "wsed/tensor.hpp"

namespace wsed {

enum class RunMode { kTrain, kInfer };
enum class Activation { kLinear, kSigmoid, kTanh };

double sigmoid_scalar(double x);

// Elementwise activations as standalone tensor ops.
Tensor sigmoid(const Tensor& x);
Tensor tanh_op(const Tensor& x);
// dx from dy and the forward *output* y (sigmoid: y(1-y), tanh: 1-y^2).
Tensor sigmoid_backward(const Tensor& y, const Tensor& dy);
Tensor tanh_backward(const Tensor& y, const Tensor& dy);

// Mean binary cross-entropy with the usual [1e-7, 1-1e-7] clip on predictions.
double bce_loss(const Tensor& pred, const Tensor& target);
// Accumulates weight * dBCE/dpred into grad_out.values; returns the loss.
double bce_loss_with_grad(const Tensor& pred, const Tensor& target,
                          double weight, Tensor& grad_out);

// Differentiable layer. forward() caches whatever backward() needs; backward()
// consumes the cache, accumulates parameter gradients, and returns the
// gradient with respect to the layer input.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, RunMode mode, Rng& rng) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<std::pair<std::string, Tensor*>> named_params() {
    return {};
  }
  // Non-trainable persistent state (batch-norm running statistics).
  virtual std::vector<std::pair<std::string, Tensor*>> named_state() {
    return {};
  }
};

// 3x3 convolution, stride 1, zero "same" padding. Input [B,T,F,Cin],
// output [B,T,F,Cout].
class Conv2d : public Layer {
 public:
  Conv2d(size_t in_channels, size_t out_channels, std::string name = "conv");
  void init(Rng& rng);
  Tensor forward(const Tensor& x, RunMode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<std::pair<std::string, Tensor*>> named_params() override;

  Tensor& kernel() { return kernel_; }
  Tensor& bias() { return bias_; }

 private:
  size_t cin_, cout_;
  std::string name_;
  Tensor kernel_;  // [3,3,Cin,Cout]
  Tensor bias_;    // [Cout]
  Tensor x_;       // cached input
};

// Max pooling along the frequency axis only: [B,T,F,C] -> [B,T,F/p,C].
// Gradient goes to the first maximum on ties.
class MaxPoolFreq : public Layer {
 public:
  explicit MaxPoolFreq(size_t pool);
  Tensor forward(const Tensor& x, RunMode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  size_t pool() const { return pool_; }

 private:
  size_t pool_;
  std::vector<size_t> in_shape_;
  std::vector<uint32_t> argmax_;  // chosen f-offset per output element
};

// Per-channel normalization over every axis but the last. Train mode uses
// batch statistics and updates running averages; infer mode uses the running
// averages as constants.
class BatchNorm : public Layer {
 public:
  explicit BatchNorm(size_t channels, std::string name = "bn",
                     double eps = 1e-5, double momentum = 0.99);
  Tensor forward(const Tensor& x, RunMode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<std::pair<std::string, Tensor*>> named_params() override;
  std::vector<std::pair<std::string, Tensor*>> named_state() override;

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

 private:
  size_t channels_;
  std::string name_;
  double eps_, momentum_;
  Tensor gamma_, beta_;
  Tensor running_mean_, running_var_;
  // caches
  RunMode mode_ = RunMode::kTrain;
  std::vector<size_t> in_shape_;
  std::vector<double> xhat_;
  std::vector<double> inv_std_;
};

// Fully connected layer applied to the trailing axis; leading axes are
// preserved, which is what makes it time-distributed over [B,T,Din] input.
class Dense : public Layer {
 public:
  Dense(size_t in_dim, size_t out_dim, Activation act,
        std::string name = "dense");
  void init(Rng& rng);
  Tensor forward(const Tensor& x, RunMode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<std::pair<std::string, Tensor*>> named_params() override;

  Tensor& weight() { return w_; }
  Tensor& bias() { return b_; }
  size_t in_dim() const { return in_; }
  size_t out_dim() const { return out_; }

 private:
  size_t in_, out_;
  Activation act_;
  std::string name_;
  Tensor w_;  // [Din,Dout]
  Tensor b_;  // [Dout]
  Tensor x_, y_;
};

// Inverted dropout: train mode zeroes with probability `rate` and scales
// survivors by 1/(1-rate); infer mode is the identity.
class Dropout : public Layer {
 public:
  explicit Dropout(double rate);
  Tensor forward(const Tensor& x, RunMode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  double rate() const { return rate_; }

 private:
  double rate_;
  bool passthrough_ = true;
  std::vector<double> mask_;
};

// Bidirectional GRU, tanh candidate activation, zero initial state.
// Gate convention: h_t = (1-z) h_{t-1} + z hcand. Input [B,T,Din],
// output [B,T,2*Dh] (forward direction first).
class BiGru : public Layer {
 public:
  BiGru(size_t in_dim, size_t hidden, std::string name = "gru");
  void init(Rng& rng);
  Tensor forward(const Tensor& x, RunMode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<std::pair<std::string, Tensor*>> named_params() override;
  size_t hidden() const { return dh_; }

 private:
  struct Direction {
    Tensor wz, wr, wh;  // [Din,Dh]
    Tensor uz, ur, uh;  // [Dh,Dh]
    Tensor bz, br, bh;  // [Dh]
    // per-forward caches, each [B,T,Dh]
    std::vector<double> z, r, hc, h;
  };

  void run_direction(Direction& d, const Tensor& x, bool reverse,
                     Tensor& y, size_t half_offset);
  void backward_direction(Direction& d, const Tensor& dy, bool reverse,
                          size_t half_offset, Tensor& dx);

  size_t din_, dh_;
  std::string name_;
  Direction fwd_, bwd_;
  Tensor x_;
};

// Mean over the time axis: [B,T,C] -> [B,C].
class MeanOverTime : public Layer {
 public:
  Tensor forward(const Tensor& x, RunMode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;

 private:
  std::vector<size_t> in_shape_;
};

// Standalone elementwise activation layer.
class ActivationLayer : public Layer {
 public:
  explicit ActivationLayer(Activation act) : act_(act) {}
  Tensor forward(const Tensor& x, RunMode mode, Rng& rng) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Activation act_;
  Tensor y_;
};

// Glorot-uniform fill; drawn values are rounded to f32 precision so models
// survive the f32 checkpoint round trip bit-exactly.
void glorot_uniform(Tensor& t, size_t fan_in, size_t fan_out, Rng& rng);

}  // namespace wsed

#include "wsed/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace wsed {

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& x) {
  Tensor y(x.shape());
  for (size_t i = 0; i < x.size(); ++i) y.v(i) = sigmoid_scalar(x.v(i));
  return y;
}

Tensor tanh_op(const Tensor& x) {
  Tensor y(x.shape());
  for (size_t i = 0; i < x.size(); ++i) y.v(i) = std::tanh(x.v(i));
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  if (!y.same_shape(dy)) throw ShapeError("sigmoid_backward: shape mismatch");
  Tensor dx(y.shape());
  for (size_t i = 0; i < y.size(); ++i)
    dx.v(i) = dy.v(i) * y.v(i) * (1.0 - y.v(i));
  return dx;
}

Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
  if (!y.same_shape(dy)) throw ShapeError("tanh_backward: shape mismatch");
  Tensor dx(y.shape());
  for (size_t i = 0; i < y.size(); ++i)
    dx.v(i) = dy.v(i) * (1.0 - y.v(i) * y.v(i));
  return dx;
}

namespace {

constexpr double kBceClip = 1e-7;

double act_apply(Activation act, double z) {
  switch (act) {
    case Activation::kLinear: return z;
    case Activation::kSigmoid: return sigmoid_scalar(z);
    case Activation::kTanh: return std::tanh(z);
  }
  return z;
}

double act_deriv_from_y(Activation act, double y) {
  switch (act) {
    case Activation::kLinear: return 1.0;
    case Activation::kSigmoid: return y * (1.0 - y);
    case Activation::kTanh: return 1.0 - y * y;
  }
  return 1.0;
}

}  // namespace

double bce_loss(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target)) throw ShapeError("bce_loss: shape mismatch");
  const size_t n = pred.size();
  if (n == 0) throw ShapeError("bce_loss: empty tensors");
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double p = std::clamp(pred.v(i), kBceClip, 1.0 - kBceClip);
    const double y = target.v(i);
    sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(n);
}

double bce_loss_with_grad(const Tensor& pred, const Tensor& target,
                          double weight, Tensor& grad_out) {
  if (!pred.same_shape(target)) throw ShapeError("bce_loss: shape mismatch");
  if (!pred.same_shape(grad_out))
    throw ShapeError("bce_loss: grad buffer shape mismatch");
  const size_t n = pred.size();
  if (n == 0) throw ShapeError("bce_loss: empty tensors");
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double raw = pred.v(i);
    const double p = std::clamp(raw, kBceClip, 1.0 - kBceClip);
    const double y = target.v(i);
    sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    // The clip is flat outside (kBceClip, 1-kBceClip), so the gradient there
    // is exactly zero.
    if (raw > kBceClip && raw < 1.0 - kBceClip)
      grad_out.v(i) += weight * (p - y) / (p * (1.0 - p)) * inv_n;
  }
  return sum * inv_n;
}

void glorot_uniform(Tensor& t, size_t fan_in, size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (size_t i = 0; i < t.size(); ++i)
    t.v(i) = static_cast<double>(
        static_cast<float>(rng.uniform(-limit, limit)));
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(size_t in_channels, size_t out_channels, std::string name)
    : cin_(in_channels),
      cout_(out_channels),
      name_(std::move(name)),
      kernel_({3, 3, in_channels, out_channels}),
      bias_({out_channels}) {}

void Conv2d::init(Rng& rng) {
  glorot_uniform(kernel_, 9 * cin_, 9 * cout_, rng);
  bias_.fill(0.0);
}

Tensor Conv2d::forward(const Tensor& x, RunMode, Rng&) {
  if (x.rank() != 4 || x.dim(3) != cin_)
    throw ShapeError("conv2d: expected [B,T,F," + std::to_string(cin_) +
                     "], got " + x.shape_str());
  x_ = x;
  const size_t B = x.dim(0), T = x.dim(1), F = x.dim(2);
  Tensor y({B, T, F, cout_});

  const double* xp = x.data();
  const double* kp = kernel_.data();
  const double* bp = bias_.data();
  double* yp = y.data();

  for (size_t b = 0; b < B; ++b) {
    for (size_t t = 0; t < T; ++t) {
      for (size_t f = 0; f < F; ++f) {
        double* yrow = yp + ((b * T + t) * F + f) * cout_;
        for (size_t co = 0; co < cout_; ++co) yrow[co] = bp[co];
      }
      for (int dt = -1; dt <= 1; ++dt) {
        const long tt = static_cast<long>(t) + dt;
        if (tt < 0 || tt >= static_cast<long>(T)) continue;
        for (size_t f = 0; f < F; ++f) {
          double* yrow = yp + ((b * T + t) * F + f) * cout_;
          for (int df = -1; df <= 1; ++df) {
            const long ff = static_cast<long>(f) + df;
            if (ff < 0 || ff >= static_cast<long>(F)) continue;
            const double* xrow = xp + ((b * T + tt) * F + ff) * cin_;
            const double* krow =
                kp + (((dt + 1) * 3 + (df + 1)) * cin_) * cout_;
            for (size_t ci = 0; ci < cin_; ++ci) {
              const double v = xrow[ci];
              const double* kc = krow + ci * cout_;
              for (size_t co = 0; co < cout_; ++co) yrow[co] += v * kc[co];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const size_t B = x_.dim(0), T = x_.dim(1), F = x_.dim(2);
  require_shape(dy, {B, T, F, cout_}, "conv2d backward");

  Tensor dx(x_.shape());
  const double* xp = x_.data();
  const double* kp = kernel_.data();
  const double* gp = dy.data();
  double* dxp = dx.data();
  double* dkp = kernel_.grad();
  double* dbp = bias_.grad();

  for (size_t b = 0; b < B; ++b) {
    for (size_t t = 0; t < T; ++t) {
      for (size_t f = 0; f < F; ++f) {
        const double* grow = gp + ((b * T + t) * F + f) * cout_;
        for (size_t co = 0; co < cout_; ++co) dbp[co] += grow[co];
        for (int dt = -1; dt <= 1; ++dt) {
          const long tt = static_cast<long>(t) + dt;
          if (tt < 0 || tt >= static_cast<long>(T)) continue;
          for (int df = -1; df <= 1; ++df) {
            const long ff = static_cast<long>(f) + df;
            if (ff < 0 || ff >= static_cast<long>(F)) continue;
            const size_t in_off = ((b * T + tt) * F + ff) * cin_;
            const size_t k_off = (((dt + 1) * 3 + (df + 1)) * cin_) * cout_;
            for (size_t ci = 0; ci < cin_; ++ci) {
              const double xv = xp[in_off + ci];
              const double* krow = kp + k_off + ci * cout_;
              double* dkrow = dkp + k_off + ci * cout_;
              double acc = 0.0;
              for (size_t co = 0; co < cout_; ++co) {
                const double g = grow[co];
                dkrow[co] += xv * g;
                acc += krow[co] * g;
              }
              dxp[in_off + ci] += acc;
            }
          }
        }
      }
    }
  }
  return dx;
}

std::vector<std::pair<std::string, Tensor*>> Conv2d::named_params() {
  return {{name_ + ".kernel", &kernel_}, {name_ + ".bias", &bias_}};
}

// ---------------------------------------------------------------------------
// MaxPoolFreq

MaxPoolFreq::MaxPoolFreq(size_t pool) : pool_(pool) {
  if (pool_ == 0) throw UsageError("maxpool_freq: pool factor must be >= 1");
}

Tensor MaxPoolFreq::forward(const Tensor& x, RunMode, Rng&) {
  if (x.rank() != 4) throw ShapeError("maxpool_freq: expected rank-4 input");
  const size_t B = x.dim(0), T = x.dim(1), F = x.dim(2), C = x.dim(3);
  if (F % pool_ != 0)
    throw ShapeError("maxpool_freq: F=" + std::to_string(F) +
                     " not divisible by pool=" + std::to_string(pool_));
  in_shape_ = x.shape();
  const size_t Fo = F / pool_;
  Tensor y({B, T, Fo, C});
  argmax_.assign(y.size(), 0);

  const double* xp = x.data();
  double* yp = y.data();
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < T; ++t)
      for (size_t fo = 0; fo < Fo; ++fo) {
        const size_t out_off = ((b * T + t) * Fo + fo) * C;
        for (size_t c = 0; c < C; ++c) {
          double best = -INFINITY;
          uint32_t best_k = 0;
          for (size_t k = 0; k < pool_; ++k) {
            const double v = xp[((b * T + t) * F + fo * pool_ + k) * C + c];
            if (v > best) {  // strict: first maximum wins ties
              best = v;
              best_k = static_cast<uint32_t>(k);
            }
          }
          yp[out_off + c] = best;
          argmax_[out_off + c] = best_k;
        }
      }
  return y;
}

Tensor MaxPoolFreq::backward(const Tensor& dy) {
  const size_t B = in_shape_[0], T = in_shape_[1], F = in_shape_[2],
               C = in_shape_[3];
  const size_t Fo = F / pool_;
  require_shape(dy, {B, T, Fo, C}, "maxpool_freq backward");
  Tensor dx(in_shape_);
  double* dxp = dx.data();
  const double* gp = dy.data();
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < T; ++t)
      for (size_t fo = 0; fo < Fo; ++fo) {
        const size_t out_off = ((b * T + t) * Fo + fo) * C;
        for (size_t c = 0; c < C; ++c) {
          const size_t k = argmax_[out_off + c];
          dxp[((b * T + t) * F + fo * pool_ + k) * C + c] += gp[out_off + c];
        }
      }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(size_t channels, std::string name, double eps,
                     double momentum)
    : channels_(channels),
      name_(std::move(name)),
      eps_(eps),
      momentum_(momentum),
      gamma_({channels}),
      beta_({channels}),
      running_mean_({channels}),
      running_var_({channels}) {
  gamma_.fill(1.0);
  beta_.fill(0.0);
  running_mean_.fill(0.0);
  running_var_.fill(1.0);
}

Tensor BatchNorm::forward(const Tensor& x, RunMode mode, Rng&) {
  if (x.rank() < 2 || x.shape().back() != channels_)
    throw ShapeError("batch_norm: trailing dim must be " +
                     std::to_string(channels_) + ", got " + x.shape_str());
  mode_ = mode;
  in_shape_ = x.shape();
  const size_t C = channels_;
  const size_t rows = x.size() / C;

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (mode == RunMode::kTrain) {
    const double* xp = x.data();
    for (size_t r = 0; r < rows; ++r) {
      const double* row = xp + r * C;
      for (size_t c = 0; c < C; ++c) mean[c] += row[c];
    }
    const double inv_m = 1.0 / static_cast<double>(rows);
    for (size_t c = 0; c < C; ++c) mean[c] *= inv_m;
    for (size_t r = 0; r < rows; ++r) {
      const double* row = xp + r * C;
      for (size_t c = 0; c < C; ++c) {
        const double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (size_t c = 0; c < C; ++c) var[c] *= inv_m;
    for (size_t c = 0; c < C; ++c) {
      running_mean_.v(c) = momentum_ * running_mean_.v(c) +
                           (1.0 - momentum_) * mean[c];
      running_var_.v(c) = momentum_ * running_var_.v(c) +
                          (1.0 - momentum_) * var[c];
    }
  } else {
    for (size_t c = 0; c < C; ++c) {
      mean[c] = running_mean_.v(c);
      var[c] = running_var_.v(c);
    }
  }

  inv_std_.resize(C);
  for (size_t c = 0; c < C; ++c) inv_std_[c] = 1.0 / std::sqrt(var[c] + eps_);

  Tensor y(x.shape());
  xhat_.resize(x.size());
  const double* xp = x.data();
  double* yp = y.data();
  for (size_t r = 0; r < rows; ++r) {
    const size_t off = r * C;
    for (size_t c = 0; c < C; ++c) {
      const double xh = (xp[off + c] - mean[c]) * inv_std_[c];
      xhat_[off + c] = xh;
      yp[off + c] = gamma_.v(c) * xh + beta_.v(c);
    }
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  if (dy.shape() != in_shape_) throw ShapeError("batch_norm backward: shape");
  const size_t C = channels_;
  const size_t rows = dy.size() / C;
  const double inv_m = 1.0 / static_cast<double>(rows);

  std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
  const double* gp = dy.data();
  for (size_t r = 0; r < rows; ++r) {
    const size_t off = r * C;
    for (size_t c = 0; c < C; ++c) {
      sum_dy[c] += gp[off + c];
      sum_dy_xhat[c] += gp[off + c] * xhat_[off + c];
    }
  }
  for (size_t c = 0; c < C; ++c) {
    gamma_.g(c) += sum_dy_xhat[c];
    beta_.g(c) += sum_dy[c];
  }

  Tensor dx(in_shape_);
  double* dxp = dx.data();
  if (mode_ == RunMode::kTrain) {
    // Batch statistics depend on x, hence the centering terms.
    for (size_t r = 0; r < rows; ++r) {
      const size_t off = r * C;
      for (size_t c = 0; c < C; ++c) {
        const double g = gamma_.v(c) * inv_std_[c];
        dxp[off + c] = g * (gp[off + c] - inv_m * sum_dy[c] -
                            xhat_[off + c] * inv_m * sum_dy_xhat[c]);
      }
    }
  } else {
    for (size_t r = 0; r < rows; ++r) {
      const size_t off = r * C;
      for (size_t c = 0; c < C; ++c)
        dxp[off + c] = gp[off + c] * gamma_.v(c) * inv_std_[c];
    }
  }
  return dx;
}

std::vector<std::pair<std::string, Tensor*>> BatchNorm::named_params() {
  return {{name_ + ".gamma", &gamma_}, {name_ + ".beta", &beta_}};
}

std::vector<std::pair<std::string, Tensor*>> BatchNorm::named_state() {
  return {{name_ + ".running_mean", &running_mean_},
          {name_ + ".running_var", &running_var_}};
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(size_t in_dim, size_t out_dim, Activation act, std::string name)
    : in_(in_dim),
      out_(out_dim),
      act_(act),
      name_(std::move(name)),
      w_({in_dim, out_dim}),
      b_({out_dim}) {}

void Dense::init(Rng& rng) {
  glorot_uniform(w_, in_, out_, rng);
  b_.fill(0.0);
}

Tensor Dense::forward(const Tensor& x, RunMode, Rng&) {
  if (x.rank() < 1 || x.shape().back() != in_)
    throw ShapeError("dense " + name_ + ": trailing dim must be " +
                     std::to_string(in_) + ", got " + x.shape_str());
  x_ = x;
  std::vector<size_t> out_shape = x.shape();
  out_shape.back() = out_;
  Tensor y(out_shape);

  const size_t rows = x.size() / in_;
  const double* xp = x.data();
  const double* wp = w_.data();
  const double* bp = b_.data();
  double* yp = y.data();

  for (size_t r = 0; r < rows; ++r) {
    const double* xrow = xp + r * in_;
    double* yrow = yp + r * out_;
    for (size_t o = 0; o < out_; ++o) yrow[o] = bp[o];
    for (size_t i = 0; i < in_; ++i) {
      const double v = xrow[i];
      const double* wrow = wp + i * out_;
      for (size_t o = 0; o < out_; ++o) yrow[o] += v * wrow[o];
    }
    if (act_ != Activation::kLinear)
      for (size_t o = 0; o < out_; ++o) yrow[o] = act_apply(act_, yrow[o]);
  }
  y_ = y;
  return y;
}

Tensor Dense::backward(const Tensor& dy) {
  if (dy.shape() != y_.shape()) throw ShapeError("dense backward: shape");
  const size_t rows = x_.size() / in_;
  Tensor dx(x_.shape());

  const double* xp = x_.data();
  const double* yp = y_.data();
  const double* wp = w_.data();
  const double* gp = dy.data();
  double* dxp = dx.data();
  double* dwp = w_.grad();
  double* dbp = b_.grad();

  std::vector<double> da(out_);
  for (size_t r = 0; r < rows; ++r) {
    const size_t yoff = r * out_;
    for (size_t o = 0; o < out_; ++o)
      da[o] = gp[yoff + o] * act_deriv_from_y(act_, yp[yoff + o]);
    for (size_t o = 0; o < out_; ++o) dbp[o] += da[o];
    const double* xrow = xp + r * in_;
    double* dxrow = dxp + r * in_;
    for (size_t i = 0; i < in_; ++i) {
      const double xv = xrow[i];
      const double* wrow = wp + i * out_;
      double* dwrow = dwp + i * out_;
      double acc = 0.0;
      for (size_t o = 0; o < out_; ++o) {
        dwrow[o] += xv * da[o];
        acc += wrow[o] * da[o];
      }
      dxrow[i] = acc;
    }
  }
  return dx;
}

std::vector<std::pair<std::string, Tensor*>> Dense::named_params() {
  return {{name_ + ".weight", &w_}, {name_ + ".bias", &b_}};
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(double rate) : rate_(rate) {
  if (rate_ < 0.0 || rate_ >= 1.0)
    throw UsageError("dropout: rate must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, RunMode mode, Rng& rng) {
  if (mode == RunMode::kInfer || rate_ == 0.0) {
    passthrough_ = true;
    return x;
  }
  passthrough_ = false;
  const double scale = 1.0 / (1.0 - rate_);
  mask_.resize(x.size());
  Tensor y(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    mask_[i] = rng.uniform() < rate_ ? 0.0 : scale;
    y.v(i) = x.v(i) * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& dy) {
  if (passthrough_) return dy;
  if (dy.size() != mask_.size()) throw ShapeError("dropout backward: shape");
  Tensor dx(dy.shape());
  for (size_t i = 0; i < dy.size(); ++i) dx.v(i) = dy.v(i) * mask_[i];
  return dx;
}

// ---------------------------------------------------------------------------
// BiGru

namespace {

// out[B,O] += x[B,I] * W[I,O], rows given by offsets into flat arrays
void addmm(const double* x, size_t xoff, const double* w, size_t I, size_t O,
           size_t B, size_t xstride, double* out) {
  for (size_t b = 0; b < B; ++b) {
    const double* xrow = x + xoff + b * xstride;
    double* orow = out + b * O;
    for (size_t i = 0; i < I; ++i) {
      const double v = xrow[i];
      const double* wrow = w + i * O;
      for (size_t o = 0; o < O; ++o) orow[o] += v * wrow[o];
    }
  }
}

}  // namespace

BiGru::BiGru(size_t in_dim, size_t hidden, std::string name)
    : din_(in_dim), dh_(hidden), name_(std::move(name)) {
  auto mk = [&](Direction& d) {
    d.wz = Tensor({din_, dh_});
    d.wr = Tensor({din_, dh_});
    d.wh = Tensor({din_, dh_});
    d.uz = Tensor({dh_, dh_});
    d.ur = Tensor({dh_, dh_});
    d.uh = Tensor({dh_, dh_});
    d.bz = Tensor({dh_});
    d.br = Tensor({dh_});
    d.bh = Tensor({dh_});
  };
  mk(fwd_);
  mk(bwd_);
}

void BiGru::init(Rng& rng) {
  for (Direction* d : {&fwd_, &bwd_}) {
    glorot_uniform(d->wz, din_, dh_, rng);
    glorot_uniform(d->wr, din_, dh_, rng);
    glorot_uniform(d->wh, din_, dh_, rng);
    glorot_uniform(d->uz, dh_, dh_, rng);
    glorot_uniform(d->ur, dh_, dh_, rng);
    glorot_uniform(d->uh, dh_, dh_, rng);
    d->bz.fill(0.0);
    d->br.fill(0.0);
    d->bh.fill(0.0);
  }
}

void BiGru::run_direction(Direction& d, const Tensor& x, bool reverse,
                          Tensor& y, size_t half_offset) {
  const size_t B = x.dim(0), T = x.dim(1);
  const size_t n = B * T * dh_;
  d.z.assign(n, 0.0);
  d.r.assign(n, 0.0);
  d.hc.assign(n, 0.0);
  d.h.assign(n, 0.0);

  std::vector<double> h_prev(B * dh_, 0.0);
  std::vector<double> az(B * dh_), ar(B * dh_), ah(B * dh_), rh(B * dh_);

  const double* xp = x.data();
  for (size_t step = 0; step < T; ++step) {
    const size_t t = reverse ? T - 1 - step : step;
    const size_t xoff = t * din_;

    for (size_t b = 0; b < B; ++b)
      for (size_t j = 0; j < dh_; ++j) {
        az[b * dh_ + j] = d.bz.v(j);
        ar[b * dh_ + j] = d.br.v(j);
      }
    addmm(xp, xoff, d.wz.data(), din_, dh_, B, T * din_, az.data());
    addmm(h_prev.data(), 0, d.uz.data(), dh_, dh_, B, dh_, az.data());
    addmm(xp, xoff, d.wr.data(), din_, dh_, B, T * din_, ar.data());
    addmm(h_prev.data(), 0, d.ur.data(), dh_, dh_, B, dh_, ar.data());

    for (size_t i = 0; i < B * dh_; ++i) {
      az[i] = sigmoid_scalar(az[i]);
      ar[i] = sigmoid_scalar(ar[i]);
      rh[i] = ar[i] * h_prev[i];
      ah[i] = 0.0;
    }
    for (size_t b = 0; b < B; ++b)
      for (size_t j = 0; j < dh_; ++j) ah[b * dh_ + j] = d.bh.v(j);
    addmm(xp, xoff, d.wh.data(), din_, dh_, B, T * din_, ah.data());
    addmm(rh.data(), 0, d.uh.data(), dh_, dh_, B, dh_, ah.data());

    double* yp = y.data();
    for (size_t b = 0; b < B; ++b) {
      const size_t cache = (b * T + t) * dh_;
      for (size_t j = 0; j < dh_; ++j) {
        const size_t i = b * dh_ + j;
        const double z = az[i];
        const double hc = std::tanh(ah[i]);
        const double h = (1.0 - z) * h_prev[i] + z * hc;
        d.z[cache + j] = z;
        d.r[cache + j] = ar[i];
        d.hc[cache + j] = hc;
        d.h[cache + j] = h;
        h_prev[i] = h;
        yp[(b * T + t) * 2 * dh_ + half_offset + j] = h;
      }
    }
  }
}

Tensor BiGru::forward(const Tensor& x, RunMode, Rng&) {
  if (x.rank() != 3 || x.dim(2) != din_)
    throw ShapeError("bigru: expected [B,T," + std::to_string(din_) +
                     "], got " + x.shape_str());
  x_ = x;
  const size_t B = x.dim(0), T = x.dim(1);
  Tensor y({B, T, 2 * dh_});
  run_direction(fwd_, x, false, y, 0);
  run_direction(bwd_, x, true, y, dh_);
  return y;
}

void BiGru::backward_direction(Direction& d, const Tensor& dy, bool reverse,
                               size_t half_offset, Tensor& dx) {
  const size_t B = x_.dim(0), T = x_.dim(1);
  std::vector<double> dh_carry(B * dh_, 0.0);
  std::vector<double> daz(B * dh_), dar(B * dh_), dah(B * dh_), drh(B * dh_);
  std::vector<double> h_prev(B * dh_), rh(B * dh_);

  const double* xp = x_.data();
  const double* gp = dy.data();
  double* dxp = dx.data();

  for (size_t step = 0; step < T; ++step) {
    // walk opposite to the forward order of this direction
    const size_t t = reverse ? step : T - 1 - step;
    const size_t t_prev = reverse ? t + 1 : t - 1;
    const bool has_prev = reverse ? (t + 1 < T) : (t > 0);

    for (size_t b = 0; b < B; ++b) {
      const size_t cache_prev = (b * T + t_prev) * dh_;
      for (size_t j = 0; j < dh_; ++j)
        h_prev[b * dh_ + j] = has_prev ? d.h[cache_prev + j] : 0.0;
    }

    for (size_t b = 0; b < B; ++b) {
      const size_t cache = (b * T + t) * dh_;
      for (size_t j = 0; j < dh_; ++j) {
        const size_t i = b * dh_ + j;
        const double dh = gp[(b * T + t) * 2 * dh_ + half_offset + j] +
                          dh_carry[i];
        const double z = d.z[cache + j];
        const double r = d.r[cache + j];
        const double hc = d.hc[cache + j];
        const double hp = h_prev[i];

        const double dz = dh * (hc - hp);
        const double dhc = dh * z;
        dh_carry[i] = dh * (1.0 - z);  // direct path to h_{t-1}
        dah[i] = dhc * (1.0 - hc * hc);
        daz[i] = dz * z * (1.0 - z);
        rh[i] = r * hp;
      }
    }

    // through the candidate's recurrent term: d(r*h_prev) = dah * Uh^T
    std::fill(drh.begin(), drh.end(), 0.0);
    for (size_t b = 0; b < B; ++b) {
      const double* garow = dah.data() + b * dh_;
      double* orow = drh.data() + b * dh_;
      for (size_t i = 0; i < dh_; ++i) {
        const double* urow = d.uh.data() + i * dh_;
        double acc = 0.0;
        for (size_t o = 0; o < dh_; ++o) acc += urow[o] * garow[o];
        orow[i] = acc;
      }
    }

    for (size_t b = 0; b < B; ++b) {
      const size_t cache = (b * T + t) * dh_;
      for (size_t j = 0; j < dh_; ++j) {
        const size_t i = b * dh_ + j;
        const double r = d.r[cache + j];
        const double dr = drh[i] * h_prev[i];
        dar[i] = dr * r * (1.0 - r);
        dh_carry[i] += drh[i] * r;
      }
    }

    // parameter gradients
    auto accum_w = [&](Tensor& dw, const std::vector<double>& da) {
      double* dwp = dw.grad();
      for (size_t b = 0; b < B; ++b) {
        const double* xrow = xp + (b * T + t) * din_;
        const double* darow = da.data() + b * dh_;
        for (size_t i = 0; i < din_; ++i) {
          const double xv = xrow[i];
          double* dwrow = dwp + i * dh_;
          for (size_t o = 0; o < dh_; ++o) dwrow[o] += xv * darow[o];
        }
      }
    };
    auto accum_u = [&](Tensor& du, const std::vector<double>& state,
                       const std::vector<double>& da) {
      double* dup = du.grad();
      for (size_t b = 0; b < B; ++b) {
        const double* srow = state.data() + b * dh_;
        const double* darow = da.data() + b * dh_;
        for (size_t i = 0; i < dh_; ++i) {
          const double sv = srow[i];
          double* durow = dup + i * dh_;
          for (size_t o = 0; o < dh_; ++o) durow[o] += sv * darow[o];
        }
      }
    };
    auto accum_b = [&](Tensor& db, const std::vector<double>& da) {
      double* dbp = db.grad();
      for (size_t b = 0; b < B; ++b)
        for (size_t j = 0; j < dh_; ++j) dbp[j] += da[b * dh_ + j];
    };

    accum_w(d.wz, daz);
    accum_w(d.wr, dar);
    accum_w(d.wh, dah);
    accum_u(d.uz, h_prev, daz);
    accum_u(d.ur, h_prev, dar);
    accum_u(d.uh, rh, dah);
    accum_b(d.bz, daz);
    accum_b(d.br, dar);
    accum_b(d.bh, dah);

    // into h_prev through Uz, Ur and into x_t through Wz, Wr, Wh
    for (size_t b = 0; b < B; ++b) {
      const double* zrow = daz.data() + b * dh_;
      const double* rrow = dar.data() + b * dh_;
      const double* hrow = dah.data() + b * dh_;
      double* carry = dh_carry.data() + b * dh_;
      for (size_t i = 0; i < dh_; ++i) {
        const double* uz = d.uz.data() + i * dh_;
        const double* ur = d.ur.data() + i * dh_;
        double acc = 0.0;
        for (size_t o = 0; o < dh_; ++o) acc += uz[o] * zrow[o] + ur[o] * rrow[o];
        carry[i] += acc;
      }
      double* dxrow = dxp + (b * T + t) * din_;
      for (size_t i = 0; i < din_; ++i) {
        const double* wz = d.wz.data() + i * dh_;
        const double* wr = d.wr.data() + i * dh_;
        const double* wh = d.wh.data() + i * dh_;
        double acc = 0.0;
        for (size_t o = 0; o < dh_; ++o)
          acc += wz[o] * zrow[o] + wr[o] * rrow[o] + wh[o] * hrow[o];
        dxrow[i] += acc;
      }
    }
  }
}

Tensor BiGru::backward(const Tensor& dy) {
  const size_t B = x_.dim(0), T = x_.dim(1);
  require_shape(dy, {B, T, 2 * dh_}, "bigru backward");
  Tensor dx(x_.shape());
  backward_direction(fwd_, dy, false, 0, dx);
  backward_direction(bwd_, dy, true, dh_, dx);
  return dx;
}

std::vector<std::pair<std::string, Tensor*>> BiGru::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add = [&](const std::string& dir, Direction& d) {
    out.emplace_back(name_ + "." + dir + ".wz", &d.wz);
    out.emplace_back(name_ + "." + dir + ".wr", &d.wr);
    out.emplace_back(name_ + "." + dir + ".wh", &d.wh);
    out.emplace_back(name_ + "." + dir + ".uz", &d.uz);
    out.emplace_back(name_ + "." + dir + ".ur", &d.ur);
    out.emplace_back(name_ + "." + dir + ".uh", &d.uh);
    out.emplace_back(name_ + "." + dir + ".bz", &d.bz);
    out.emplace_back(name_ + "." + dir + ".br", &d.br);
    out.emplace_back(name_ + "." + dir + ".bh", &d.bh);
  };
  add("fwd", fwd_);
  add("bwd", bwd_);
  return out;
}

// ---------------------------------------------------------------------------
// MeanOverTime

Tensor MeanOverTime::forward(const Tensor& x, RunMode, Rng&) {
  if (x.rank() != 3) throw ShapeError("mean_over_time: expected [B,T,C]");
  in_shape_ = x.shape();
  const size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  Tensor y({B, C});
  const double inv_t = 1.0 / static_cast<double>(T);
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < T; ++t) {
      const double* xrow = x.data() + (b * T + t) * C;
      double* yrow = y.data() + b * C;
      for (size_t c = 0; c < C; ++c) yrow[c] += xrow[c] * inv_t;
    }
  return y;
}

Tensor MeanOverTime::backward(const Tensor& dy) {
  const size_t B = in_shape_[0], T = in_shape_[1], C = in_shape_[2];
  require_shape(dy, {B, C}, "mean_over_time backward");
  Tensor dx(in_shape_);
  const double inv_t = 1.0 / static_cast<double>(T);
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < T; ++t) {
      double* dxrow = dx.data() + (b * T + t) * C;
      const double* grow = dy.data() + b * C;
      for (size_t c = 0; c < C; ++c) dxrow[c] = grow[c] * inv_t;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// ActivationLayer

Tensor ActivationLayer::forward(const Tensor& x, RunMode, Rng&) {
  Tensor y(x.shape());
  for (size_t i = 0; i < x.size(); ++i) y.v(i) = act_apply(act_, x.v(i));
  y_ = y;
  return y;
}

Tensor ActivationLayer::backward(const Tensor& dy) {
  if (!dy.same_shape(y_)) throw ShapeError("activation backward: shape");
  Tensor dx(dy.shape());
  for (size_t i = 0; i < dy.size(); ++i)
    dx.v(i) = dy.v(i) * act_deriv_from_y(act_, y_.v(i));
  return dx;
}

}  // namespace wsed

#include "wsed/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "wsed/layers.hpp"
#include "wsed/trainer.hpp"

namespace wsed {

double rel_err(double analytic, double numeric, double floor) {
  const double denom = std::max(std::fabs(analytic) + std::fabs(numeric), floor);
  return std::fabs(analytic - numeric) / denom;
}

double run_grad_check(const GradCheckCase& c, double h) {
  c.compute_grads();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(c.wrt.size());
  for (const Tensor* t : c.wrt)
    analytic.emplace_back(t->grad(), t->grad() + t->size());

  double max_err = 0.0;
  for (size_t k = 0; k < c.wrt.size(); ++k) {
    Tensor* t = c.wrt[k];
    for (size_t i = 0; i < t->size(); ++i) {
      const double orig = t->v(i);
      t->v(i) = orig + h;
      const double fp = c.eval();
      t->v(i) = orig - h;
      const double fm = c.eval();
      t->v(i) = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      max_err = std::max(max_err, rel_err(analytic[k][i], numeric));
    }
  }
  return max_err;
}

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a.v(i) * b.v(i);
  return s;
}

void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (size_t i = 0; i < t.size(); ++i) t.v(i) = rng.uniform(lo, hi);
}

// Shared harness: a layer, its input, and fixed scalarization coefficients.
struct LayerHarness {
  std::shared_ptr<Layer> layer;
  std::shared_ptr<Tensor> x;
  std::shared_ptr<Tensor> coeff;
  RunMode mode = RunMode::kTrain;
};

GradCheckCase make_layer_case(const std::string& op, LayerHarness h,
                              std::vector<Tensor*> extra_wrt, Rng& rng) {
  // one forward to learn the output shape, then freeze coefficients
  Rng scratch(1);
  Tensor y0 = h.layer->forward(*h.x, h.mode, scratch);
  h.coeff = std::make_shared<Tensor>(y0.shape());
  fill_uniform(*h.coeff, rng, -1.0, 1.0);

  GradCheckCase c;
  c.op = op;
  c.eval = [h]() {
    Rng r(1);
    Tensor y = h.layer->forward(*h.x, h.mode, r);
    return dot(y, *h.coeff);
  };
  c.compute_grads = [h]() {
    for (auto& [name, p] : h.layer->named_params()) p->zero_grad();
    h.x->zero_grad();
    Rng r(1);
    Tensor y = h.layer->forward(*h.x, h.mode, r);
    Tensor dy(y.shape());
    for (size_t i = 0; i < dy.size(); ++i) dy.v(i) = h.coeff->v(i);
    Tensor dx = h.layer->backward(dy);
    for (size_t i = 0; i < dx.size(); ++i) h.x->g(i) = dx.v(i);
  };
  for (auto& [name, p] : h.layer->named_params()) c.wrt.push_back(p);
  for (Tensor* t : extra_wrt) c.wrt.push_back(t);
  c.wrt.push_back(h.x.get());
  return c;
}

GradCheckCase make_conv_case(Rng& rng) {
  const size_t B = 1 + rng.uniform_int(2), T = 3 + rng.uniform_int(3),
               F = 3 + rng.uniform_int(3), cin = 1 + rng.uniform_int(2),
               cout = 1 + rng.uniform_int(3);
  LayerHarness h;
  auto conv = std::make_shared<Conv2d>(cin, cout);
  conv->init(rng);
  fill_uniform(conv->bias(), rng, -0.3, 0.3);
  h.layer = conv;
  h.x = std::make_shared<Tensor>(std::vector<size_t>{B, T, F, cin});
  fill_uniform(*h.x, rng, -1.0, 1.0);
  return make_layer_case("conv2d", h, {}, rng);
}

GradCheckCase make_maxpool_case(Rng& rng) {
  const size_t p = 2 + rng.uniform_int(2);
  const size_t B = 1 + rng.uniform_int(2), T = 2 + rng.uniform_int(3),
               Fo = 2 + rng.uniform_int(2), C = 1 + rng.uniform_int(2);
  const size_t F = Fo * p;
  LayerHarness h;
  h.layer = std::make_shared<MaxPoolFreq>(p);
  h.x = std::make_shared<Tensor>(std::vector<size_t>{B, T, F, C});
  // keep in-window values separated so the finite-difference step cannot
  // flip the argmax
  for (size_t b = 0; b < B; ++b)
    for (size_t t = 0; t < T; ++t)
      for (size_t fo = 0; fo < Fo; ++fo)
        for (size_t c = 0; c < C; ++c) {
          bool ok = false;
          std::vector<double> vals(p);
          while (!ok) {
            for (size_t k = 0; k < p; ++k) vals[k] = rng.uniform(-1.0, 1.0);
            ok = true;
            for (size_t a = 0; a < p && ok; ++a)
              for (size_t bb = a + 1; bb < p; ++bb)
                if (std::fabs(vals[a] - vals[bb]) < 1e-3) {
                  ok = false;
                  break;
                }
          }
          for (size_t k = 0; k < p; ++k)
            h.x->v(((b * T + t) * F + fo * p + k) * C + c) = vals[k];
        }
  return make_layer_case("maxpool_freq", h, {}, rng);
}

GradCheckCase make_batchnorm_case(Rng& rng) {
  const size_t B = 2, T = 2 + rng.uniform_int(3), F = 2 + rng.uniform_int(3),
               C = 1 + rng.uniform_int(3);
  LayerHarness h;
  auto bn = std::make_shared<BatchNorm>(C);
  fill_uniform(bn->gamma(), rng, 0.5, 1.5);
  fill_uniform(bn->beta(), rng, -0.5, 0.5);
  h.layer = bn;
  h.x = std::make_shared<Tensor>(std::vector<size_t>{B, T, F, C});
  fill_uniform(*h.x, rng, -2.0, 2.0);
  return make_layer_case("batch_norm", h, {}, rng);
}

GradCheckCase make_dense_case(Rng& rng, Activation act, const std::string& op) {
  const size_t B = 1 + rng.uniform_int(2), T = 2 + rng.uniform_int(4),
               din = 2 + rng.uniform_int(4), dout = 1 + rng.uniform_int(4);
  LayerHarness h;
  auto dense = std::make_shared<Dense>(din, dout, act);
  dense->init(rng);
  fill_uniform(dense->bias(), rng, -0.3, 0.3);
  h.layer = dense;
  h.x = std::make_shared<Tensor>(std::vector<size_t>{B, T, din});
  fill_uniform(*h.x, rng, -1.0, 1.0);
  return make_layer_case(op, h, {}, rng);
}

GradCheckCase make_bigru_case(Rng& rng) {
  const size_t B = 1 + rng.uniform_int(2), T = 3 + rng.uniform_int(4),
               din = 2 + rng.uniform_int(3), dh = 2 + rng.uniform_int(3);
  LayerHarness h;
  auto gru = std::make_shared<BiGru>(din, dh);
  gru->init(rng);
  h.layer = gru;
  h.x = std::make_shared<Tensor>(std::vector<size_t>{B, T, din});
  fill_uniform(*h.x, rng, -1.0, 1.0);
  return make_layer_case("bigru", h, {}, rng);
}

GradCheckCase make_activation_case(Rng& rng, Activation act,
                                   const std::string& op) {
  LayerHarness h;
  h.layer = std::make_shared<ActivationLayer>(act);
  h.x = std::make_shared<Tensor>(
      std::vector<size_t>{2, 3 + rng.uniform_int(5)});
  fill_uniform(*h.x, rng, -2.0, 2.0);
  return make_layer_case(op, h, {}, rng);
}

GradCheckCase make_bce_case(Rng& rng) {
  auto pred = std::make_shared<Tensor>(
      std::vector<size_t>{2 + rng.uniform_int(2), 3 + rng.uniform_int(3)});
  auto target = std::make_shared<Tensor>(pred->shape());
  fill_uniform(*pred, rng, 0.05, 0.95);
  for (size_t i = 0; i < target->size(); ++i)
    target->v(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;

  GradCheckCase c;
  c.op = "bce_loss";
  c.eval = [pred, target]() { return bce_loss(*pred, *target); };
  c.compute_grads = [pred, target]() {
    pred->zero_grad();
    Tensor g(pred->shape());
    bce_loss_with_grad(*pred, *target, 1.0, g);
    for (size_t i = 0; i < g.size(); ++i) pred->g(i) = g.v(i);
  };
  c.wrt = {pred.get()};
  return c;
}

GradCheckCase make_combined_loss_case(Rng& rng) {
  const size_t T = 3 + rng.uniform_int(3), C = 2 + rng.uniform_int(3);
  auto sp = std::make_shared<Tensor>(std::vector<size_t>{T, C});
  auto st = std::make_shared<Tensor>(sp->shape());
  auto wp = std::make_shared<Tensor>(std::vector<size_t>{C});
  auto wt = std::make_shared<Tensor>(wp->shape());
  fill_uniform(*sp, rng, 0.05, 0.95);
  fill_uniform(*wp, rng, 0.05, 0.95);
  for (size_t i = 0; i < st->size(); ++i)
    st->v(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  for (size_t i = 0; i < wt->size(); ++i)
    wt->v(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  const double weights[] = {0.002, 0.02, 0.2, 1.0};
  const double ws = weights[rng.uniform_int(4)];
  const double ww = weights[rng.uniform_int(4)];

  GradCheckCase c;
  c.op = "combined_loss";
  c.eval = [=]() { return combined_loss(*sp, *st, *wp, *wt, ws, ww); };
  c.compute_grads = [=]() {
    sp->zero_grad();
    wp->zero_grad();
    Tensor ds(sp->shape()), dw(wp->shape());
    combined_loss_with_grad(*sp, *st, *wp, *wt, ws, ww, ds, dw);
    for (size_t i = 0; i < ds.size(); ++i) sp->g(i) = ds.v(i);
    for (size_t i = 0; i < dw.size(); ++i) wp->g(i) = dw.v(i);
  };
  c.wrt = {sp.get(), wp.get()};
  return c;
}

void inject_fault(GradCheckCase& c) {
  auto orig = c.compute_grads;
  Tensor* first = c.wrt.front();
  c.compute_grads = [orig, first]() {
    orig();
    size_t worst = 0;
    for (size_t i = 0; i < first->size(); ++i)
      if (std::fabs(first->g(i)) > std::fabs(first->g(worst))) worst = i;
    first->g(worst) *= 1.1;
  };
}

}  // namespace

std::vector<GradCheckReport> run_all_grad_checks(uint64_t seed, int rounds,
                                                 const std::string& fault_op) {
  using Maker = std::function<GradCheckCase(Rng&)>;
  const std::vector<std::pair<std::string, Maker>> makers = {
      {"conv2d", make_conv_case},
      {"maxpool_freq", make_maxpool_case},
      {"batch_norm", make_batchnorm_case},
      {"dense", [](Rng& r) { return make_dense_case(r, Activation::kTanh, "dense"); }},
      {"dense_linear",
       [](Rng& r) { return make_dense_case(r, Activation::kLinear, "dense_linear"); }},
      {"bigru", make_bigru_case},
      {"sigmoid",
       [](Rng& r) { return make_activation_case(r, Activation::kSigmoid, "sigmoid"); }},
      {"tanh",
       [](Rng& r) { return make_activation_case(r, Activation::kTanh, "tanh"); }},
      {"bce_loss", make_bce_case},
      {"combined_loss", make_combined_loss_case},
  };

  std::vector<GradCheckReport> reports;
  for (const auto& [op, make] : makers) {
    GradCheckReport rep;
    rep.op = op;
    rep.rounds = rounds;
    for (int round = 0; round < rounds; ++round) {
      Rng rng(seed * 1000003ull + static_cast<uint64_t>(round) * 7919ull +
              std::hash<std::string>{}(op));
      GradCheckCase c = make(rng);
      if (op == fault_op) inject_fault(c);
      rep.max_err = std::max(rep.max_err, run_grad_check(c));
    }
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace wsed

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wsed/gradcheck.hpp"
#include "wsed/layers.hpp"
#include "wsed/optimizer.hpp"
#include "wsed/trainer.hpp"

using namespace wsed;

namespace {

Tensor rand_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0,
                   double hi = 1.0) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t.v(i) = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  Conv2d conv(1, 1);
  conv.kernel().fill(0.0);
  conv.kernel().v((1 * 3 + 1) * 1 * 1) = 1.0;  // center tap
  conv.bias().fill(0.0);
  Rng rng(1);
  Tensor x = rand_tensor({2, 5, 6, 1}, rng);
  Tensor y = conv.forward(x, RunMode::kInfer, rng);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(y.v(i) == doctest::Approx(x.v(i)).epsilon(1e-15));
}

TEST_CASE("conv2d all-ones kernel counts the zero-padded neighborhood") {
  Conv2d conv(1, 1);
  conv.kernel().fill(1.0);
  conv.bias().fill(0.0);
  Rng rng(1);
  Tensor x({1, 4, 4, 1});
  x.fill(1.0);
  Tensor y = conv.forward(x, RunMode::kInfer, rng);
  auto at = [&y](size_t t, size_t f) { return y.v((t * 4 + f)); };
  CHECK(at(1, 1) == doctest::Approx(9.0));
  CHECK(at(0, 0) == doctest::Approx(4.0));
  CHECK(at(0, 3) == doctest::Approx(4.0));
  CHECK(at(3, 0) == doctest::Approx(4.0));
  CHECK(at(0, 1) == doctest::Approx(6.0));  // edge, not corner
}

TEST_CASE("conv2d preserves T for any length") {
  Rng rng(3);
  for (size_t T : {1, 2, 7, 23}) {
    Conv2d conv(2, 3);
    conv.init(rng);
    Tensor x = rand_tensor({1, T, 4, 2}, rng);
    Tensor y = conv.forward(x, RunMode::kInfer, rng);
    CHECK(y.dim(1) == T);
  }
}

TEST_CASE("conv2d rejects channel mismatch") {
  Conv2d conv(2, 3);
  Rng rng(1);
  Tensor x({1, 4, 4, 1});
  CHECK_THROWS_AS(conv.forward(x, RunMode::kInfer, rng), ShapeError);
}

TEST_CASE("maxpool along frequency") {
  Rng rng(1);
  MaxPoolFreq pool(2);
  Tensor x({1, 1, 4, 1});
  x.v(0) = 1;
  x.v(1) = 3;
  x.v(2) = 2;
  x.v(3) = 2;
  Tensor y = pool.forward(x, RunMode::kInfer, rng);
  REQUIRE(y.shape() == std::vector<size_t>{1, 1, 2, 1});
  CHECK(y.v(0) == 3);
  CHECK(y.v(1) == 2);

  SUBCASE("pool factor 1 is the identity") {
    MaxPoolFreq p1(1);
    Tensor z = rand_tensor({2, 3, 4, 2}, rng);
    Tensor out = p1.forward(z, RunMode::kInfer, rng);
    for (size_t i = 0; i < z.size(); ++i) CHECK(out.v(i) == z.v(i));
  }
  SUBCASE("ties route gradient to the first maximum") {
    MaxPoolFreq p2(2);
    Tensor t({1, 1, 2, 1});
    t.v(0) = 5;
    t.v(1) = 5;
    p2.forward(t, RunMode::kInfer, rng);
    Tensor dy({1, 1, 1, 1});
    dy.v(0) = 1.0;
    Tensor dx = p2.backward(dy);
    CHECK(dx.v(0) == 1.0);
    CHECK(dx.v(1) == 0.0);
  }
  SUBCASE("indivisible frequency axis is rejected") {
    MaxPoolFreq p3(3);
    Tensor t({1, 1, 4, 1});
    CHECK_THROWS_AS(p3.forward(t, RunMode::kInfer, rng), ShapeError);
  }
}

TEST_CASE("batch norm") {
  Rng rng(5);
  SUBCASE("constant channel maps to beta in train mode") {
    BatchNorm bn(2);
    bn.beta().v(0) = 0.7;
    bn.beta().v(1) = -0.2;
    Tensor x({2, 3, 1, 2});
    for (size_t i = 0; i < x.size(); i += 2) {
      x.v(i) = 4.2;
      x.v(i + 1) = -1.0;
    }
    Tensor y = bn.forward(x, RunMode::kTrain, rng);
    for (size_t i = 0; i < y.size(); i += 2) {
      CHECK(y.v(i) == doctest::Approx(0.7));
      CHECK(y.v(i + 1) == doctest::Approx(-0.2));
    }
  }
  SUBCASE("train mode standardizes per channel") {
    BatchNorm bn(3);
    Tensor x = rand_tensor({4, 5, 2, 3}, rng, -2.0, 5.0);
    Tensor y = bn.forward(x, RunMode::kTrain, rng);
    const size_t rows = y.size() / 3;
    for (size_t c = 0; c < 3; ++c) {
      double mean = 0.0, var = 0.0;
      for (size_t r = 0; r < rows; ++r) mean += y.v(r * 3 + c);
      mean /= rows;
      for (size_t r = 0; r < rows; ++r) {
        const double d = y.v(r * 3 + c) - mean;
        var += d * d;
      }
      var /= rows;
      CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // up to epsilon
    }
  }
  SUBCASE("infer mode uses running statistics") {
    BatchNorm bn(1);
    // fresh running stats are mean 0, var 1: infer is then near-identity
    Tensor x = rand_tensor({2, 4, 1, 1}, rng);
    Tensor y = bn.forward(x, RunMode::kInfer, rng);
    for (size_t i = 0; i < x.size(); ++i)
      CHECK(y.v(i) == doctest::Approx(x.v(i) / std::sqrt(1.0 + 1e-5)));
  }
}

TEST_CASE("dense layer") {
  Rng rng(6);
  SUBCASE("identity weights, linear activation") {
    Dense dense(3, 3, Activation::kLinear);
    dense.weight().fill(0.0);
    for (size_t i = 0; i < 3; ++i) dense.weight().v(i * 3 + i) = 1.0;
    dense.bias().fill(0.0);
    Tensor x = rand_tensor({2, 4, 3}, rng);
    Tensor y = dense.forward(x, RunMode::kInfer, rng);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y.v(i) == x.v(i));
  }
  SUBCASE("time distribution preserves leading dims") {
    Dense dense(4, 7, Activation::kTanh);
    dense.init(rng);
    for (size_t T : {1, 5, 31}) {
      Tensor x = rand_tensor({2, T, 4}, rng);
      Tensor y = dense.forward(x, RunMode::kInfer, rng);
      CHECK(y.shape() == std::vector<size_t>{2, T, 7});
    }
  }
  SUBCASE("trailing dim mismatch is rejected") {
    Dense dense(4, 2, Activation::kLinear);
    Tensor x({1, 3, 5});
    CHECK_THROWS_AS(dense.forward(x, RunMode::kInfer, rng), ShapeError);
  }
}

TEST_CASE("bigru") {
  Rng rng(7);
  SUBCASE("all-zero parameters give all-zero output") {
    BiGru gru(3, 4);
    Tensor x = rand_tensor({2, 6, 3}, rng);
    Tensor y = gru.forward(x, RunMode::kInfer, rng);
    REQUIRE(y.shape() == std::vector<size_t>{2, 6, 8});
    for (size_t i = 0; i < y.size(); ++i) CHECK(y.v(i) == 0.0);
  }
  SUBCASE("T=1 equals two independent single GRU steps") {
    const size_t din = 3, dh = 2;
    BiGru gru(din, dh);
    gru.init(rng);
    Tensor x = rand_tensor({1, 1, din}, rng);
    Tensor y = gru.forward(x, RunMode::kInfer, rng);

    auto params = gru.named_params();
    auto find = [&params](const std::string& name) -> Tensor& {
      for (auto& [n, t] : params)
        if (n == "gru." + name) return *t;
      REQUIRE(false);
      return *params[0].second;
    };
    for (const std::string dir : {"fwd", "bwd"}) {
      Tensor& wz = find(dir + ".wz");
      Tensor& wh = find(dir + ".wh");
      Tensor& bz = find(dir + ".bz");
      Tensor& bh = find(dir + ".bh");
      for (size_t j = 0; j < dh; ++j) {
        double az = bz.v(j), ah = bh.v(j);
        for (size_t i = 0; i < din; ++i) {
          az += x.v(i) * wz.v(i * dh + j);
          ah += x.v(i) * wh.v(i * dh + j);
        }
        // h_prev = 0, so the reset gate drops out of the candidate
        const double expected = sigmoid_scalar(az) * std::tanh(ah);
        const size_t off = dir == "fwd" ? 0 : dh;
        CHECK(y.v(off + j) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
  SUBCASE("T preserved for any length") {
    BiGru gru(2, 3);
    gru.init(rng);
    for (size_t T : {1, 2, 9, 17}) {
      Tensor x = rand_tensor({1, T, 2}, rng);
      CHECK(gru.forward(x, RunMode::kInfer, rng).dim(1) == T);
    }
  }
}

TEST_CASE("activations") {
  CHECK(sigmoid_scalar(0.0) == 0.5);
  CHECK(std::tanh(0.0) == 0.0);
  Rng rng(8);
  Tensor x = rand_tensor({37}, rng, -5.0, 5.0);
  Tensor s = sigmoid(x);
  Tensor nx({37});
  for (size_t i = 0; i < x.size(); ++i) nx.v(i) = -x.v(i);
  Tensor sn = sigmoid(nx);
  for (size_t i = 0; i < x.size(); ++i) {
    CHECK(s.v(i) > 0.0);
    CHECK(s.v(i) < 1.0);
    CHECK(s.v(i) + sn.v(i) == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor t = tanh_op(x);
  for (size_t i = 0; i < x.size(); ++i) {
    CHECK(t.v(i) > -1.0);
    CHECK(t.v(i) < 1.0);
  }
}

TEST_CASE("dropout") {
  Rng rng(9);
  SUBCASE("rate 0 and infer mode are identities") {
    Dropout d0(0.0);
    Tensor x = rand_tensor({100}, rng);
    Tensor y = d0.forward(x, RunMode::kTrain, rng);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y.v(i) == x.v(i));

    Dropout d(0.5);
    Tensor z = d.forward(x, RunMode::kInfer, rng);
    for (size_t i = 0; i < x.size(); ++i) CHECK(z.v(i) == x.v(i));
  }
  SUBCASE("rate >= 1 is rejected") {
    CHECK_THROWS_AS(Dropout(1.0), UsageError);
    CHECK_THROWS_AS(Dropout(-0.1), UsageError);
  }
  SUBCASE("inverted scaling keeps the mean") {
    Dropout d(0.5);
    Tensor x({20000});
    x.fill(1.0);
    double total = 0.0;
    const int trials = 5;
    for (int k = 0; k < trials; ++k) {
      Tensor y = d.forward(x, RunMode::kTrain, rng);
      for (size_t i = 0; i < y.size(); ++i) total += y.v(i);
    }
    const double mean = total / (trials * x.size());
    // per-element variance is 1 at rate 0.5, so 3 sigma of the mean
    CHECK(std::fabs(mean - 1.0) < 3.0 / std::sqrt(trials * 20000.0));
  }
}

TEST_CASE("bce loss") {
  SUBCASE("perfect prediction is ~0, p=0.5 is ln 2") {
    Tensor p({1}), y({1});
    p.v(0) = 1.0;
    y.v(0) = 1.0;
    CHECK(bce_loss(p, y) == doctest::Approx(0.0).epsilon(1e-6));
    p.v(0) = 0.5;
    CHECK(bce_loss(p, y) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("loss is nonnegative") {
    Rng rng(10);
    for (int k = 0; k < 50; ++k) {
      Tensor p = rand_tensor({13}, rng, 0.001, 0.999);
      Tensor y({13});
      for (size_t i = 0; i < y.size(); ++i)
        y.v(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
      CHECK(bce_loss(p, y) >= 0.0);
    }
  }
  SUBCASE("gradient matches the closed form") {
    Rng rng(11);
    Tensor p = rand_tensor({4, 3}, rng, 0.1, 0.9);
    Tensor y({4, 3});
    for (size_t i = 0; i < y.size(); ++i)
      y.v(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor g(p.shape());
    bce_loss_with_grad(p, y, 1.0, g);
    for (size_t i = 0; i < p.size(); ++i) {
      const double expected =
          (p.v(i) - y.v(i)) / (p.v(i) * (1.0 - p.v(i))) / p.size();
      CHECK(g.v(i) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("shape mismatch rejected") {
    Tensor p({2}), y({3});
    CHECK_THROWS_AS(bce_loss(p, y), ShapeError);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient from a fresh state is a no-op") {
    Tensor w({3});
    w.v(0) = 1.0;
    w.v(1) = -2.0;
    w.v(2) = 0.5;
    Adam adam({&w}, {});
    w.zero_grad();
    adam.step();
    CHECK(adam.steps() == 1);
    CHECK(w.v(0) == 1.0);
    CHECK(w.v(1) == -2.0);
    CHECK(w.v(2) == 0.5);
  }
  SUBCASE("first step moves by ~lr against the gradient sign") {
    Tensor w({1});
    w.v(0) = 0.3;
    AdamConfig cfg;
    cfg.lr = 0.001;
    Adam adam({&w}, cfg);
    w.g(0) = 0.5;
    adam.step();
    // bias-corrected first step: lr * g / (|g| + eps) ~ lr
    CHECK(w.v(0) == doctest::Approx(0.3 - 0.001).epsilon(1e-6));
    CHECK(w.g(0) == 0.0);  // gradients zeroed after the step
  }
  SUBCASE("quadratic bowl converges") {
    Tensor w({1});
    w.v(0) = 1.0;
    AdamConfig cfg;
    cfg.lr = 0.01;
    Adam adam({&w}, cfg);
    for (int i = 0; i < 500; ++i) {
      w.g(0) = 2.0 * w.v(0);
      adam.step();
    }
    CHECK(std::fabs(w.v(0)) < 0.01);
  }
}

TEST_CASE("gradient checks across all operators") {
  const auto reports = run_all_grad_checks(123, 3);
  REQUIRE(!reports.empty());
  for (const auto& r : reports) {
    INFO(r.op);
    CHECK(r.max_err < 1e-4);
    if (r.op == "dense_linear") CHECK(r.max_err < 1e-7);
  }
}

TEST_CASE("gradient checker detects a corrupted backward pass") {
  const auto reports = run_all_grad_checks(123, 3, "conv2d");
  for (const auto& r : reports) {
    if (r.op == "conv2d")
      CHECK(r.max_err > 1e-2);
    else
      CHECK(r.max_err < 1e-4);
  }
}

TEST_CASE("gradient checker is deterministic") {
  const auto a = run_all_grad_checks(77, 2);
  const auto b = run_all_grad_checks(77, 2);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].max_err == b[i].max_err);
}

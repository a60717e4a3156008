#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "wsed/model.hpp"

using namespace wsed;

namespace {

Tensor rand_tensor(std::vector<size_t> shape, Rng& rng, double lo = -1.0,
                   double hi = 1.0) {
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t.v(i) = rng.uniform(lo, hi);
  return t;
}

ModelConfig tiny_config(size_t C = 3, uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.num_classes = C;
  cfg.input_bands = 8;
  cfg.conv_filters = {2};
  cfg.conv_pools = {8};
  cfg.gru_units = 2;
  cfg.strong_dense = {C};
  cfg.weak_dense = {C};
  cfg.dropout_rate = 0.0;
  cfg.seed = seed;
  return cfg;
}

void zero_named(SedModel& m, const std::string& prefix) {
  for (auto& [name, t] : m.named_params())
    if (name.rfind(prefix, 0) == 0) t->fill(0.0);
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  SUBCASE("pool product must equal input bands") {
    cfg.conv_pools = {4};
    CHECK_THROWS_AS(CrnnModel{cfg}, UsageError);
  }
  SUBCASE("strong head must end in C") {
    cfg.strong_dense = {5};
    CHECK_THROWS_AS(CrnnModel{cfg}, UsageError);
  }
  SUBCASE("dropout must be a probability") {
    cfg.dropout_rate = 1.0;
    CHECK_THROWS_AS(CrnnModel{cfg}, UsageError);
  }
}

TEST_CASE("tiny model parameter count matches the hand count") {
  // conv 3*3*1*2+2 = 20, bn gamma+beta = 4,
  // gru: 2 dirs * 3 gates * (2*2 + 2*2 + 2) = 60,
  // strong dense 4->3: 15, weak dense 3->3: 12
  CrnnModel model(tiny_config());
  CHECK(model.count_parameters() == 20 + 4 + 60 + 15 + 12);
}

TEST_CASE("default configuration lands near 218k parameters") {
  CrnnModel model(ModelConfig::defaults(17));
  CHECK(model.count_parameters() >= 200000);
  CHECK(model.count_parameters() <= 240000);
  // the advertised operating point
  CHECK(std::llabs(static_cast<long long>(model.count_parameters()) - 218000) <
        2000);
}

TEST_CASE("forward shapes and output ranges") {
  ModelConfig cfg = ModelConfig::defaults(17);
  cfg.seed = 5;
  CrnnModel model(cfg);
  Rng rng(2);
  Tensor x = rand_tensor({1, 500, 40}, rng, -20.0, 3.0);
  const ModelOutput out = model.forward(x, RunMode::kInfer);
  CHECK(out.strong.shape() == std::vector<size_t>{1, 500, 17});
  CHECK(out.weak.shape() == std::vector<size_t>{1, 17});
  for (size_t i = 0; i < out.strong.size(); ++i) {
    CHECK(out.strong.v(i) > 0.0);
    CHECK(out.strong.v(i) < 1.0);
  }
  for (size_t i = 0; i < out.weak.size(); ++i) {
    CHECK(out.weak.v(i) > 0.0);
    CHECK(out.weak.v(i) < 1.0);
  }
}

TEST_CASE("strong time dimension tracks the input for any T") {
  CrnnModel model(tiny_config());
  Rng rng(3);
  for (size_t T : {1, 2, 17, 101}) {
    Tensor x = rand_tensor({2, T, 8}, rng);
    const ModelOutput out = model.forward(x, RunMode::kInfer);
    CHECK(out.strong.dim(1) == T);
    CHECK(out.weak.dim(1) == 3);
  }
}

TEST_CASE("zero output layers give 0.5 everywhere") {
  CrnnModel model(tiny_config());
  zero_named(model, "strong0");
  zero_named(model, "weak0");
  Rng rng(4);
  Tensor x = rand_tensor({1, 9, 8}, rng);
  const ModelOutput out = model.forward(x, RunMode::kInfer);
  for (size_t i = 0; i < out.strong.size(); ++i)
    CHECK(out.strong.v(i) == 0.5);
  for (size_t i = 0; i < out.weak.size(); ++i) CHECK(out.weak.v(i) == 0.5);
}

TEST_CASE("inference is deterministic") {
  CrnnModel model(tiny_config(4, 9));
  Rng rng(5);
  Tensor x = rand_tensor({2, 33, 8}, rng);
  const ModelOutput a = model.forward(x, RunMode::kInfer);
  const ModelOutput b = model.forward(x, RunMode::kInfer);
  for (size_t i = 0; i < a.strong.size(); ++i)
    CHECK(a.strong.v(i) == b.strong.v(i));
  for (size_t i = 0; i < a.weak.size(); ++i) CHECK(a.weak.v(i) == b.weak.v(i));
}

TEST_CASE("collapse_time is the plain time mean") {
  CrnnModel model(tiny_config());
  SUBCASE("constant over time collapses to that constant") {
    Tensor pre({1, 7, 3});
    for (size_t t = 0; t < 7; ++t)
      for (size_t c = 0; c < 3; ++c) pre.v(t * 3 + c) = 0.5 + c;
    const Tensor m = model.collapse_time(pre);
    REQUIRE(m.shape() == std::vector<size_t>{1, 3});
    for (size_t c = 0; c < 3; ++c)
      CHECK(m.v(c) == doctest::Approx(0.5 + c).epsilon(1e-14));
  }
  SUBCASE("T=1 collapses to the single frame") {
    Rng rng(6);
    Tensor pre = rand_tensor({1, 1, 3}, rng);
    const Tensor m = model.collapse_time(pre);
    for (size_t c = 0; c < 3; ++c) CHECK(m.v(c) == pre.v(c));
  }
  SUBCASE("permuting frames leaves the aggregate unchanged") {
    Rng rng(7);
    Tensor pre = rand_tensor({1, 5, 3}, rng);
    Tensor shuffled = pre;
    const size_t perm[5] = {3, 0, 4, 2, 1};
    for (size_t t = 0; t < 5; ++t)
      for (size_t c = 0; c < 3; ++c)
        shuffled.v(t * 3 + c) = pre.v(perm[t] * 3 + c);
    const Tensor a = model.collapse_time(pre);
    const Tensor b = model.collapse_time(shuffled);
    for (size_t c = 0; c < 3; ++c)
      CHECK(a.v(c) == doctest::Approx(b.v(c)).epsilon(1e-14));
  }
}

TEST_CASE("weak head is wired off the strong head activations") {
  // backward from the weak output alone must reach the trunk, which can only
  // happen through the strong head in this architecture
  CrnnModel model(tiny_config(3, 21));
  Rng rng(8);
  Tensor x = rand_tensor({1, 6, 8}, rng);
  model.forward(x, RunMode::kTrain);
  Tensor dstrong({1, 6, 3});  // zero: no strong-loss signal
  Tensor dweak({1, 3});
  dweak.fill(1.0);
  for (auto& [name, t] : model.named_params()) t->zero_grad();
  model.backward(dstrong, &dweak);

  auto grad_nonzero = [&model](const std::string& prefix) {
    double mag = 0.0;
    for (auto& [name, t] : model.named_params())
      if (name.rfind(prefix, 0) == 0)
        for (size_t i = 0; i < t->size(); ++i) mag += std::fabs(t->g(i));
    return mag > 0.0;
  };
  CHECK(grad_nonzero("weak0"));
  CHECK(grad_nonzero("strong0"));  // weak loss flows into the strong head
  CHECK(grad_nonzero("conv0"));    // and on into the trunk
  CHECK(grad_nonzero("gru"));
}

TEST_CASE("baseline mlp") {
  SUBCASE("parameter count matches the closed form") {
    // 5*40=200 -> 50 -> 50 -> C with biases
    for (size_t C : {4u, 17u}) {
      BaselineMlp mlp(C);
      CHECK(mlp.count_parameters() ==
            200 * 50 + 50 + 50 * 50 + 50 + 50 * C + C);
    }
  }
  SUBCASE("forward is per-frame with sigmoid outputs") {
    BaselineMlp mlp(4, 40, 5, 0.2, 7);
    Rng rng(9);
    Tensor x = rand_tensor({2, 11, 40}, rng);
    const ModelOutput out = mlp.forward(x, RunMode::kInfer);
    CHECK(out.strong.shape() == std::vector<size_t>{2, 11, 4});
    CHECK_FALSE(out.has_weak);
    for (size_t i = 0; i < out.strong.size(); ++i) {
      CHECK(out.strong.v(i) > 0.0);
      CHECK(out.strong.v(i) < 1.0);
    }
  }
  SUBCASE("zero output layer gives 0.5") {
    BaselineMlp mlp(3);
    zero_named(mlp, "mlp_out");
    Rng rng(10);
    Tensor x = rand_tensor({1, 4, 40}, rng);
    const ModelOutput out = mlp.forward(x, RunMode::kInfer);
    for (size_t i = 0; i < out.strong.size(); ++i)
      CHECK(out.strong.v(i) == 0.5);
  }
}

TEST_CASE("saliency maps") {
  SUBCASE("shape equals the feature shape") {
    CrnnModel model(tiny_config(3, 31));
    Rng rng(11);
    Tensor feats = rand_tensor({19, 8}, rng);
    const Tensor map = saliency(model, feats, 1, SaliencyHead::kStrong);
    CHECK(map.shape() == std::vector<size_t>{19, 8});
    const Tensor wmap = saliency(model, feats, 1, SaliencyHead::kWeak);
    CHECK(wmap.shape() == std::vector<size_t>{19, 8});
  }
  SUBCASE("dead input layer gives an all-zero map") {
    CrnnModel model(tiny_config(3, 32));
    zero_named(model, "conv0");
    Rng rng(12);
    Tensor feats = rand_tensor({7, 8}, rng);
    const Tensor map = saliency(model, feats, 0, SaliencyHead::kStrong);
    for (size_t i = 0; i < map.size(); ++i) CHECK(map.v(i) == 0.0);
  }
  SUBCASE("linear single-layer model exposes |W| at zero input") {
    // context 1, no hidden layers: strong[t,c] = sigmoid(W x_t + b)
    BaselineMlp mlp(2, 6, 1, 0.0, 3, {});
    Tensor feats({4, 6});  // zeros: sigmoid'(0) = 0.25 at every frame
    const Tensor map = saliency(mlp, feats, 1, SaliencyHead::kStrong);
    Tensor& W = *mlp.named_params()[0].second;  // [6,2]
    for (size_t t = 0; t < 4; ++t)
      for (size_t f = 0; f < 6; ++f)
        CHECK(map.v(t * 6 + f) ==
              doctest::Approx(0.25 * std::fabs(W.v(f * 2 + 1))).epsilon(1e-12));
  }
  SUBCASE("class index out of range is rejected") {
    CrnnModel model(tiny_config());
    Tensor feats({5, 8});
    CHECK_THROWS_AS(saliency(model, feats, 3, SaliencyHead::kStrong),
                    UsageError);
  }
  SUBCASE("weak head saliency needs a weak head") {
    BaselineMlp mlp(3);
    Tensor feats({5, 40});
    CHECK_THROWS_AS(saliency(mlp, feats, 0, SaliencyHead::kWeak), UsageError);
  }
}

TEST_CASE("checkpoint round trip preserves forward output bit-exactly") {
  const std::string path = "test_model.wsedm";
  ModelConfig cfg = tiny_config(4, 77);
  cfg.conv_filters = {3};
  cfg.gru_units = 3;
  cfg.strong_dense = {5, 4};
  cfg.weak_dense = {3, 4};
  CrnnModel model(cfg);
  save_checkpoint(path, model, {{"note", "roundtrip"}});

  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.config.at("note") == "roundtrip");
  CHECK(loaded.model->type() == "crnn");
  CHECK(loaded.model->count_parameters() == model.count_parameters());

  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = rand_tensor({1, 12, 8}, rng, -3.0, 3.0);
    const ModelOutput a = model.forward(x, RunMode::kInfer);
    const ModelOutput b = loaded.model->forward(x, RunMode::kInfer);
    for (size_t i = 0; i < a.strong.size(); ++i)
      CHECK(a.strong.v(i) == b.strong.v(i));
    for (size_t i = 0; i < a.weak.size(); ++i)
      CHECK(a.weak.v(i) == b.weak.v(i));
  }
  std::filesystem::remove(path);
}

TEST_CASE("baseline checkpoint round trip") {
  const std::string path = "test_baseline.wsedm";
  BaselineMlp mlp(3, 8, 5, 0.1, 21);
  save_checkpoint(path, mlp);
  LoadedCheckpoint loaded = load_checkpoint(path);
  CHECK(loaded.model->type() == "baseline");
  Rng rng(14);
  Tensor x = rand_tensor({1, 9, 8}, rng);
  const ModelOutput a = mlp.forward(x, RunMode::kInfer);
  const ModelOutput b = loaded.model->forward(x, RunMode::kInfer);
  for (size_t i = 0; i < a.strong.size(); ++i)
    CHECK(a.strong.v(i) == b.strong.v(i));
  std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected") {
  CHECK_THROWS_AS(load_checkpoint("missing.wsedm"), DataError);
  const std::string path = "test_bad.wsedm";
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTMAGIC garbage";
  }
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  std::filesystem::remove(path);
}

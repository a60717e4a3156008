// Acceptance suite: one numbered check per criterion, each printed as a
// PASS/FAIL line. Exits nonzero if any check fails.
//
// argv[1] (optional): path to the wsed CLI binary, used by the sweep check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wsed/audio.hpp"
#include "wsed/dataset.hpp"
#include "wsed/gradcheck.hpp"
#include "wsed/metrics.hpp"
#include "wsed/model.hpp"
#include "wsed/trainer.hpp"

namespace fs = std::filesystem;
using namespace wsed;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

AudioClip noise_clip(size_t n, uint32_t sr, uint64_t seed) {
  Rng rng(seed);
  AudioClip clip;
  clip.sample_rate = sr;
  clip.samples.resize(n);
  for (double& s : clip.samples) s = 0.1 * rng.uniform(-1.0, 1.0);
  return clip;
}

// 1. every operator's analytic gradient matches finite differences at 1e-4
// over >= 20 seeds, in under two minutes
void check_gradients() {
  const auto start = Clock::now();
  const auto reports = run_all_grad_checks(2024, 20);
  const double elapsed = seconds_since(start);
  bool pass = elapsed < 120.0;
  double worst = 0.0;
  std::string worst_op = "-";
  for (const auto& r : reports) {
    if (r.max_err >= 1e-4) pass = false;
    if (r.max_err > worst) {
      worst = r.max_err;
      worst_op = r.op;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "gradient checks: worst %.2e (%s) over 20 seeds/op, %.1f s",
                worst, worst_op.c_str(), elapsed);
  report(1, pass, buf);
}

// 2. 10 s / 44.1 kHz / defaults -> exactly 500x40; T = ceil(len/hop) for 50
// random lengths
void check_shape_law() {
  FeatureConfig cfg;
  bool pass = true;
  const FeatureMatrix fm = extract_mbe(noise_clip(441000, 44100, 1), cfg);
  pass = pass && fm.frames == 500 && fm.bands == 40;

  Rng rng(2);
  const size_t hop = cfg.hop_samples(44100);
  for (int i = 0; i < 50 && pass; ++i) {
    const size_t n = 1000 + rng.uniform_int(120000);
    const FeatureMatrix f = extract_mbe(noise_clip(n, 44100, 100 + i), cfg);
    pass = pass && f.frames == (n + hop - 1) / hop && f.bands == 40;
  }
  report(2, pass,
         "feature shape law: default 10 s clip is 500x40, "
         "T = ceil(len/hop) on 50 random lengths");
}

// 3. metrics agree with a brute-force recount on 1000 random grid pairs,
// plus the hand-checked {A,B}/{A,C} case
void check_metric_oracle() {
  bool pass = true;
  Rng rng(3);
  size_t er_checked = 0;
  for (int trial = 0; trial < 1000 && pass; ++trial) {
    const size_t K = 1 + rng.uniform_int(20);
    const size_t C = 1 + rng.uniform_int(10);
    const double density = rng.uniform(0.05, 0.9);
    ActivityGrid ref = make_activity_grid(K, C);
    ActivityGrid pred = make_activity_grid(K, C);
    for (size_t i = 0; i < ref.active.size(); ++i) {
      ref.active[i] = rng.uniform() < density ? 1 : 0;
      pred.active[i] = rng.uniform() < density ? 1 : 0;
    }
    // independent recount
    long tp = 0, fp = 0, fn = 0, n = 0, s = 0, d = 0, ins = 0;
    for (size_t k = 0; k < K; ++k) {
      long fpk = 0, fnk = 0;
      for (size_t c = 0; c < C; ++c) {
        const bool r = ref.at(k, c), p = pred.at(k, c);
        if (r) ++n;
        if (r && p) ++tp;
        if (!r && p) ++fp, ++fpk;
        if (r && !p) ++fn, ++fnk;
      }
      s += std::min(fnk, fpk);
      d += std::max(0l, fnk - fpk);
      ins += std::max(0l, fpk - fnk);
    }
    const double expect_f =
        (2 * tp + fp + fn) > 0 ? 200.0 * tp / (2 * tp + fp + fn) : 0.0;
    pass = pass && std::fabs(segment_f(ref, pred) - expect_f) < 1e-12 * 100;
    if (n > 0) {
      const double expect_er = static_cast<double>(s + d + ins) / n;
      pass = pass && std::fabs(segment_er(ref, pred) - expect_er) < 1e-12;
      ++er_checked;
    }
  }
  pass = pass && er_checked > 800;

  // hand case: one segment, ref {A,B}, pred {A,C}
  ActivityGrid ref = make_activity_grid(1, 3);
  ref.set(0, 0, true);
  ref.set(0, 1, true);
  ActivityGrid pred = make_activity_grid(1, 3);
  pred.set(0, 0, true);
  pred.set(0, 2, true);
  pass = pass && std::fabs(segment_f(ref, pred) - 50.0) < 1e-12;
  pass = pass && std::fabs(segment_er(ref, pred) - 0.5) < 1e-12;
  report(3, pass,
         "metric oracle equivalence on 1000 random grids, hand case "
         "F=50 / ER=0.5");
}

// 4. table arithmetic: F(12.2, 14.1) = 13.1 +- 0.05; metric endpoints
void check_paper_arithmetic() {
  const bool pass = std::fabs(f_from_pr(12.2, 14.1) - 13.1) <= 0.05 &&
                    training_metric(100.0, 0.0) == 1.0;
  char buf[120];
  std::snprintf(buf, sizeof(buf),
                "F(P=12.2, R=14.1) = %.4f; training_metric(100, 0) = 1",
                f_from_pr(12.2, 14.1));
  report(4, pass, buf);
}

// 5. replicate -> recover identity for all weak vectors up to C=10;
// checkpoint save/load/forward bit-identical on 10 random inputs
void check_round_trips() {
  bool pass = true;
  for (size_t C = 1; C <= 10 && pass; ++C) {
    for (size_t mask = 0; mask < (1u << C) && pass; ++mask) {
      std::vector<uint8_t> weak(C);
      std::set<size_t> expected;
      for (size_t c = 0; c < C; ++c) {
        weak[c] = (mask >> c) & 1;
        if (weak[c]) expected.insert(c);
      }
      pass = weak_from_strong(replicate_weak_to_strong(weak, 7)) == expected;
    }
  }

  ModelConfig cfg;
  cfg.num_classes = 4;
  cfg.input_bands = 8;
  cfg.conv_filters = {3};
  cfg.conv_pools = {8};
  cfg.gru_units = 3;
  cfg.strong_dense = {5, 4};
  cfg.weak_dense = {3, 4};
  cfg.seed = 99;
  CrnnModel model(cfg);
  const std::string path = "acceptance_ckpt.wsedm";
  save_checkpoint(path, model);
  LoadedCheckpoint loaded = load_checkpoint(path);
  Rng rng(5);
  for (int trial = 0; trial < 10 && pass; ++trial) {
    Tensor x({1, 15, 8});
    for (size_t i = 0; i < x.size(); ++i) x.v(i) = rng.uniform(-3.0, 3.0);
    const ModelOutput a = model.forward(x, RunMode::kInfer);
    const ModelOutput b = loaded.model->forward(x, RunMode::kInfer);
    for (size_t i = 0; i < a.strong.size(); ++i)
      pass = pass && a.strong.v(i) == b.strong.v(i);
    for (size_t i = 0; i < a.weak.size(); ++i)
      pass = pass && a.weak.v(i) == b.weak.v(i);
  }
  fs::remove(path);
  report(5, pass,
         "label round trip identity (C<=10, all 2^C vectors); checkpoint "
         "save/load/forward bit-identical on 10 inputs");
}

// 6. w_s=0 silences head-exclusive parameters; doubling w_s doubles the
// strong-loss gradient contribution within 1e-10 relative
void check_loss_weighting() {
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.input_bands = 8;
  cfg.conv_filters = {4};
  cfg.conv_pools = {8};
  cfg.gru_units = 4;
  cfg.strong_dense = {6, 3};
  cfg.weak_dense = {4, 3};
  cfg.seed = 6;
  CrnnModel model(cfg);

  Rng rng(7);
  Tensor x({2, 12, 8});
  for (size_t i = 0; i < x.size(); ++i) x.v(i) = rng.uniform(-1.0, 1.0);
  Tensor st({2, 12, 3}), wt({2, 3});
  for (size_t i = 0; i < st.size(); ++i)
    st.v(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  for (size_t i = 0; i < wt.size(); ++i)
    wt.v(i) = rng.uniform() < 0.5 ? 0.0 : 1.0;

  auto field = [&](double ws, double ww) {
    for (auto& [name, t] : model.named_params()) t->zero_grad();
    const ModelOutput out = model.forward(x, RunMode::kTrain);
    Tensor ds(out.strong.shape()), dw(out.weak.shape());
    if (ws > 0) bce_loss_with_grad(out.strong, st, ws, ds);
    if (ww > 0) bce_loss_with_grad(out.weak, wt, ww, dw);
    model.backward(ds, &dw);
    std::vector<double> g;
    for (auto& [name, t] : model.named_params())
      g.insert(g.end(), t->grad(), t->grad() + t->size());
    return g;
  };

  bool pass = true;

  // the weak head is the head with exclusive parameters; with its weight at
  // zero they must be exactly silent (the strong head feeds the weak one, so
  // no parameter is exclusive to the strong path by construction)
  field(1.0, 0.0);
  for (auto& [name, t] : model.named_params())
    if (name.rfind("weak", 0) == 0)
      for (size_t i = 0; i < t->size(); ++i) pass = pass && t->g(i) == 0.0;

  // with w_s = 0 the field must equal the pure weak-loss field
  const auto g01 = field(0.0, 1.0);
  const auto g01b = field(0.0, 1.0);
  for (size_t i = 0; i < g01.size(); ++i) pass = pass && g01[i] == g01b[i];

  // linearity: g(2,1) - g(0,1) == 2 (g(1,1) - g(0,1))
  const auto g11 = field(1.0, 1.0);
  const auto g21 = field(2.0, 1.0);
  double max_rel = 0.0;
  for (size_t i = 0; i < g11.size(); ++i) {
    const double lhs = g21[i] - g01[i];
    const double rhs = 2.0 * (g11[i] - g01[i]);
    const double denom = std::max({std::fabs(lhs), std::fabs(rhs), 1e-12});
    max_rel = std::max(max_rel, std::fabs(lhs - rhs) / denom);
  }
  pass = pass && max_rel < 1e-10;
  char buf[140];
  std::snprintf(buf, sizeof(buf),
                "loss weighting: zero-weight heads silent, doubling "
                "linearity within %.2e",
                max_rel);
  report(6, pass, buf);
}

std::vector<TrainClip> featurize(const std::vector<LabeledClip>& clips,
                                 const FeatureConfig& featcfg, size_t C) {
  std::vector<TrainClip> out;
  out.reserve(clips.size());
  for (const LabeledClip& lc : clips) {
    TrainClip tc;
    tc.feats = extract_mbe(lc.audio, featcfg);
    tc.weak.assign(C, 0);
    for (size_t c : lc.weak) tc.weak[c] = 1;
    tc.events = lc.events;
    tc.has_events = !lc.events.empty();
    tc.duration_s = lc.audio.duration_s();
    out.push_back(std::move(tc));
  }
  return out;
}

// 7. end-to-end weak-supervision learning on the default synthetic data
void check_end_to_end() {
  const auto start = Clock::now();

  const auto classes = default_synth_classes(4);
  SynthConfig train_cfg;
  train_cfg.num_clips = 200;
  train_cfg.polyphony_max = 2;
  train_cfg.seed = 11;
  SynthConfig val_cfg = train_cfg;
  val_cfg.num_clips = 40;
  val_cfg.seed = 12;

  const FeatureConfig featcfg;
  const auto train_clips =
      featurize(generate_dataset(train_cfg, classes, "train"), featcfg, 4);
  const auto val_clips =
      featurize(generate_dataset(val_cfg, classes, "val"), featcfg, 4);

  ModelConfig mcfg;
  mcfg.num_classes = 4;
  mcfg.input_bands = 40;
  mcfg.conv_filters = {16, 16};
  mcfg.conv_pools = {8, 5};
  mcfg.gru_units = 24;
  mcfg.strong_dense = {24, 4};
  mcfg.weak_dense = {12, 4};
  mcfg.dropout_rate = 0.15;
  mcfg.seed = 7;
  CrnnModel model(mcfg);
  const bool params_ok = model.count_parameters() <= 50000;

  TrainConfig tcfg;
  tcfg.strong_weight = 1.0;
  tcfg.weak_weight = 1.0;
  tcfg.max_epochs = 150;
  tcfg.patience = 100;
  tcfg.batch_size = 10;
  tcfg.dropout_rate = 0.15;
  tcfg.lr = 1e-3;
  tcfg.seed = 7;
  const FitResult res = fit(model, train_clips, val_clips, tcfg);
  const bool epochs_ok = res.history.size() <= 150;

  const SplitEval eval = evaluate_split(model, val_clips);

  // degenerate predictor: the clip's true weak label replicated everywhere
  SegmentCounts base_counts;
  for (const TrainClip& clip : val_clips) {
    EventList replicated;
    for (size_t c = 0; c < clip.weak.size(); ++c)
      if (clip.weak[c]) replicated.push_back({c, 0.0, clip.duration_s});
    base_counts.accumulate(
        segment_activity(clip.events, 4, 1.0, clip.duration_s),
        segment_activity(replicated, 4, 1.0, clip.duration_s));
  }
  const double baseline_er = segment_er(base_counts);
  const double elapsed = seconds_since(start);

  const bool pass = params_ok && epochs_ok && eval.weak_f >= 80.0 &&
                    eval.er <= baseline_er - 0.15 && elapsed < 1800.0;
  char buf[240];
  std::snprintf(buf, sizeof(buf),
                "end-to-end: weak F %.1f%% (need >= 80), ER %.3f vs "
                "replicate-weak %.3f (need margin 0.15), %zu params, %zu "
                "epochs, best %zu, %.0f s",
                eval.weak_f, eval.er, baseline_er, model.count_parameters(),
                res.history.size(), res.best_epoch, elapsed);
  report(7, pass, buf);
}

std::string run_cli(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? "" : "command failed: " + cmd;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// 8. cmd_sweep over the 7 canonical pairs: completes, 7 rows, bit-identical
// on a re-run with the same seed
void check_sweep(const std::string& wsed_bin) {
  if (wsed_bin.empty()) {
    report(8, false, "sweep: wsed binary path not provided");
    return;
  }
  const std::string dir = "acceptance_sweep";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // a 50-clip set with short clips keeps the 14 trainings quick
  std::string err = run_cli(wsed_bin + " synth --out " + dir +
                            "/train --clips 50 --classes 4 --seed 21"
                            " --clip-seconds 4 --split train > /dev/null");
  if (err.empty())
    err = run_cli(wsed_bin + " synth --out " + dir +
                  "/val --clips 10 --classes 4 --seed 22 --clip-seconds 4"
                  " --split val > /dev/null");
  const std::string sweep_cmd =
      wsed_bin + " sweep --manifest " + dir + "/train/manifest.tsv" +
      " --val-manifest " + dir + "/val/manifest.tsv" +
      " --weights 0.002,0.02,0.2,1 --epochs 3 --patience 2 --batch 10" +
      " --seed 5 --filters 6,6 --pools 8,5 --gru 8 --strong-dense 8" +
      " --weak-dense 6 --dropout 0.15 --out ";
  if (err.empty()) err = run_cli(sweep_cmd + dir + "/sweep1.csv > /dev/null");
  if (err.empty()) err = run_cli(sweep_cmd + dir + "/sweep2.csv > /dev/null");

  bool pass = err.empty();
  std::string detail = err;
  if (pass) {
    const std::string a = slurp(dir + "/sweep1.csv");
    const std::string b = slurp(dir + "/sweep2.csv");
    size_t rows = 0;
    for (char ch : a) rows += ch == '\n';
    pass = rows == 8 && !a.empty() && a == b;  // header + 7 rows, identical
    detail = "cmd_sweep: 7 rows over the canonical weight pairs, re-run "
             "bit-identical";
  }
  fs::remove_all(dir);
  report(8, pass, detail);
}

// 9. baseline: closed-form parameter count; short training yields finite
// metric reports
void check_baseline() {
  BaselineMlp mlp(4, 40, 5, 0.2, 31);
  const size_t expected = 200 * 50 + 50 + 50 * 50 + 50 + 50 * 4 + 4;
  bool pass = mlp.count_parameters() == expected;

  const auto classes = default_synth_classes(4);
  SynthConfig cfg;
  cfg.num_clips = 24;
  cfg.clip_s = 4.0;
  cfg.polyphony_max = 2;
  cfg.seed = 41;
  SynthConfig vcfg = cfg;
  vcfg.num_clips = 8;
  vcfg.seed = 42;
  const FeatureConfig featcfg;
  const auto train_clips =
      featurize(generate_dataset(cfg, classes, "train"), featcfg, 4);
  const auto val_clips =
      featurize(generate_dataset(vcfg, classes, "val"), featcfg, 4);

  TrainConfig tcfg;
  tcfg.max_epochs = 10;
  tcfg.patience = 9;
  tcfg.batch_size = 8;
  tcfg.seed = 8;
  const FitResult res = fit(mlp, train_clips, val_clips, tcfg);
  for (const EpochReport& r : res.history)
    pass = pass && std::isfinite(r.total_loss) && std::isfinite(r.weak_f) &&
           std::isfinite(r.strong_er);
  const SplitEval eval = evaluate_split(mlp, val_clips);
  pass = pass && std::isfinite(eval.weak_f) && std::isfinite(eval.er) &&
         std::isfinite(eval.seg_f);
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "baseline: %zu params (closed form), trained %zu epochs, "
                "finite reports (weak F %.1f, ER %.2f)",
                mlp.count_parameters(), res.history.size(), eval.weak_f,
                eval.er);
  report(9, pass, buf);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string wsed_bin = argc > 1 ? argv[1] : "";
  check_gradients();
  check_shape_law();
  check_metric_oracle();
  check_paper_arithmetic();
  check_round_trips();
  check_loss_weighting();
  check_end_to_end();
  check_sweep(wsed_bin);
  check_baseline();
  if (g_failures == 0)
    std::printf("all acceptance criteria passed\n");
  else
    std::printf("%d acceptance criteria FAILED\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}

// wsed: weakly-supervised sound event detection toolkit CLI.
//
// Subcommands: synth, train, predict, eval, gradcheck, saliency, sweep.
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
// failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "wsed/dataset.hpp"
#include "wsed/gradcheck.hpp"
#include "wsed/matrix_io.hpp"
#include "wsed/model.hpp"
#include "wsed/trainer.hpp"
#include "wsed/wav.hpp"

namespace fs = std::filesystem;
using namespace wsed;

namespace {

std::vector<size_t> parse_size_list(const std::string& s) {
  std::vector<size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoull(item));
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  return out;
}

void parallel_for(size_t n, size_t threads, const std::function<void(size_t)>& fn) {
  threads = std::max<size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w]() {
      for (size_t i = w; i < n; i += threads) fn(i);
    });
  for (std::thread& t : pool) t.join();
}

struct FeatureFlags {
  double window_ms = 40.0;
  double overlap = 0.5;
  size_t mel_bands = 40;
  double fmin = 0.0;
  double fmax = 22050.0;
  size_t fft_size = 0;
  double log_floor = 1e-10;

  FeatureConfig to_config() const {
    FeatureConfig cfg;
    cfg.window_ms = window_ms;
    cfg.overlap_fraction = overlap;
    cfg.num_mel_bands = mel_bands;
    cfg.fmin_hz = fmin;
    cfg.fmax_hz = fmax;
    cfg.fft_size = fft_size;
    cfg.log_floor = log_floor;
    return cfg;
  }

  void add_options(CLI::App* cmd) {
    cmd->add_option("--window-ms", window_ms, "Analysis window length, ms");
    cmd->add_option("--overlap", overlap, "Window overlap fraction");
    cmd->add_option("--mel-bands", mel_bands, "Number of mel bands");
    cmd->add_option("--fmin", fmin, "Lowest mel band edge, Hz");
    cmd->add_option("--fmax", fmax, "Highest mel band edge, Hz");
    cmd->add_option("--fft-size", fft_size,
                    "FFT size (0 = next power of two over the window)");
    cmd->add_option("--log-floor", log_floor, "Energy floor before the log");
  }

  std::map<std::string, std::string> to_extras() const {
    char buf[40];
    auto d = [&buf](double x) {
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      return std::string(buf);
    };
    return {{"feat_window_ms", d(window_ms)},
            {"feat_overlap", d(overlap)},
            {"feat_mel_bands", std::to_string(mel_bands)},
            {"feat_fmin", d(fmin)},
            {"feat_fmax", d(fmax)},
            {"feat_fft_size", std::to_string(fft_size)},
            {"feat_log_floor", d(log_floor)}};
  }

  static FeatureConfig from_extras(const std::map<std::string, std::string>& m) {
    auto get = [&m](const std::string& key) -> const std::string& {
      auto it = m.find(key);
      if (it == m.end())
        throw DataError("checkpoint missing feature key '" + key + "'");
      return it->second;
    };
    FeatureConfig cfg;
    cfg.window_ms = std::stod(get("feat_window_ms"));
    cfg.overlap_fraction = std::stod(get("feat_overlap"));
    cfg.num_mel_bands = std::stoull(get("feat_mel_bands"));
    cfg.fmin_hz = std::stod(get("feat_fmin"));
    cfg.fmax_hz = std::stod(get("feat_fmax"));
    cfg.fft_size = std::stoull(get("feat_fft_size"));
    cfg.log_floor = std::stod(get("feat_log_floor"));
    return cfg;
  }
};

std::vector<std::string> checkpoint_vocab(
    const std::map<std::string, std::string>& config) {
  auto it = config.find("vocab");
  if (it == config.end()) throw DataError("checkpoint has no vocab entry");
  std::vector<std::string> vocab;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) vocab.push_back(item);
  return vocab;
}

std::vector<TrainClip> load_split(const DatasetManifest& man,
                                  const FeatureConfig& featcfg,
                                  size_t threads) {
  std::vector<TrainClip> clips(man.entries.size());
  parallel_for(man.entries.size(), threads, [&](size_t i) {
    LabeledClip lc = load_clip(man, i);
    TrainClip tc;
    tc.feats = extract_mbe(lc.audio, featcfg);
    tc.weak.assign(man.vocab.size(), 0);
    for (size_t c : lc.weak) tc.weak[c] = 1;
    tc.events = lc.events;
    tc.has_events = man.entries[i].has_strong;
    tc.duration_s = lc.audio.duration_s();
    clips[i] = std::move(tc);
  });
  return clips;
}

std::string csv_num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", x);
  return buf;
}

void write_epoch_csv_header(std::ofstream& f) {
  f << "epoch,strong_loss,weak_loss,total_loss,weak_p,weak_r,weak_f,"
       "strong_er,strong_seg_f,metric,best\n";
}

void write_epoch_csv_row(std::ofstream& f, const EpochReport& r) {
  f << r.epoch << "," << csv_num(r.strong_loss) << "," << csv_num(r.weak_loss)
    << "," << csv_num(r.total_loss) << "," << csv_num(r.weak_p) << ","
    << csv_num(r.weak_r) << "," << csv_num(r.weak_f) << ","
    << csv_num(r.strong_er) << "," << csv_num(r.strong_seg_f) << ","
    << csv_num(r.metric) << "," << (r.best_so_far ? 1 : 0) << "\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string split = "train";
  size_t clips = 200;
  size_t classes = 4;
  uint64_t seed = 1;
  double clip_seconds = 10.0;
  uint32_t sample_rate = 44100;
  size_t polyphony = 2;
  double background_db = -40.0;
  bool overlapping = false;
};

int cmd_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.num_clips = a.clips;
  cfg.clip_s = a.clip_seconds;
  cfg.sample_rate = a.sample_rate;
  cfg.polyphony_max = a.polyphony;
  cfg.background_db = a.background_db;
  cfg.seed = a.seed;

  const std::vector<SynthClass> classes =
      a.overlapping ? overlapping_synth_classes(a.classes)
                    : default_synth_classes(a.classes);
  std::vector<std::string> vocab;
  for (const SynthClass& c : classes) vocab.push_back(c.name);

  const std::vector<LabeledClip> clips =
      generate_dataset(cfg, classes, a.split);
  write_dataset(a.out, a.split, clips, vocab);

  size_t events = 0;
  for (const LabeledClip& c : clips) events += c.events.size();
  std::cout << "wrote " << clips.size() << " clips (" << events << " events, "
            << classes.size() << " classes, split '" << a.split << "') to "
            << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, val_manifest, out;
  std::string model_type = "crnn";
  double strong_weight = 1.0, weak_weight = 1.0;
  double dropout = 0.15;
  size_t epochs = 1000;
  size_t patience = 100;
  size_t batch = 32;
  double lr = 1e-3;
  uint64_t seed = 1;
  double threshold = 0.5;
  double segment = 1.0;
  std::string filters = "102,102,102";
  std::string pools = "5,4,2";
  size_t gru = 32;
  std::string strong_hidden = "32";
  std::string weak_hidden = "16";
  size_t context = 5;
  size_t threads = 1;
  bool quiet = false;
  FeatureFlags feat;
};

std::unique_ptr<SedModel> build_model_from_args(const TrainArgs& a,
                                                size_t num_classes) {
  if (a.model_type == "baseline")
    return std::make_unique<BaselineMlp>(num_classes, a.feat.mel_bands,
                                         a.context, a.dropout, a.seed);
  if (a.model_type != "crnn")
    throw UsageError("unknown model type '" + a.model_type + "'");
  ModelConfig cfg;
  cfg.num_classes = num_classes;
  cfg.input_bands = a.feat.mel_bands;
  cfg.conv_filters = parse_size_list(a.filters);
  cfg.conv_pools = parse_size_list(a.pools);
  cfg.gru_units = a.gru;
  cfg.strong_dense = parse_size_list(a.strong_hidden);
  cfg.strong_dense.push_back(num_classes);
  cfg.weak_dense = parse_size_list(a.weak_hidden);
  cfg.weak_dense.push_back(num_classes);
  cfg.dropout_rate = a.dropout;
  cfg.seed = a.seed;
  return std::make_unique<CrnnModel>(cfg);
}

int cmd_train(const TrainArgs& a) {
  const FeatureConfig featcfg = a.feat.to_config();
  featcfg.validate();

  const DatasetManifest train_man = load_manifest(a.manifest);
  const DatasetManifest val_man = load_manifest(a.val_manifest);
  if (train_man.vocab != val_man.vocab)
    throw DataError("train and validation manifests disagree on vocabulary");

  std::cout << "loading features (" << train_man.entries.size() << " train, "
            << val_man.entries.size() << " validation clips)\n";
  const std::vector<TrainClip> train = load_split(train_man, featcfg, a.threads);
  const std::vector<TrainClip> val = load_split(val_man, featcfg, a.threads);

  std::unique_ptr<SedModel> model =
      build_model_from_args(a, train_man.vocab.size());
  std::cout << "model '" << model->type() << "' with "
            << model->count_parameters() << " trainable parameters\n";

  TrainConfig cfg;
  cfg.strong_weight = a.strong_weight;
  cfg.weak_weight = a.weak_weight;
  cfg.max_epochs = a.epochs;
  cfg.patience = a.patience;
  cfg.batch_size = a.batch;
  cfg.dropout_rate = a.dropout;
  cfg.lr = a.lr;
  cfg.seed = a.seed;
  cfg.metric_segment_s = a.segment;
  cfg.threshold = a.threshold;

  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "train_log.csv", std::ios::trunc);
  if (!log) throw DataError("cannot write training log in " + a.out);
  write_epoch_csv_header(log);

  const FitResult result = fit(*model, train, val, cfg,
                               [&](const EpochReport& r) {
                                 write_epoch_csv_row(log, r);
                                 log.flush();
                                 if (!a.quiet)
                                   std::cout
                                       << "epoch " << r.epoch << " loss "
                                       << csv_num(r.total_loss) << " weak F "
                                       << csv_num(r.weak_f) << " ER "
                                       << csv_num(r.strong_er) << " metric "
                                       << csv_num(r.metric)
                                       << (r.best_so_far ? " *" : "") << "\n";
                               });

  std::map<std::string, std::string> extras = a.feat.to_extras();
  std::string vocab_join;
  for (size_t i = 0; i < train_man.vocab.size(); ++i)
    vocab_join += (i ? "," : "") + train_man.vocab[i];
  extras["vocab"] = vocab_join;

  const std::string ckpt = (fs::path(a.out) / "model.wsedm").string();
  save_checkpoint(ckpt, *model, extras);
  std::cout << "best epoch " << result.best_epoch << " (metric "
            << csv_num(result.best_metric) << "); checkpoint written to "
            << ckpt << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string model;
  std::string manifest;
  std::vector<std::string> wavs;
  std::string out;
  double threshold = 0.5;
  std::string format = "bin";
  double min_event_s = 0.0;
  double min_gap_s = 0.0;
  size_t threads = 1;
};

int cmd_predict(const PredictArgs& a) {
  LoadedCheckpoint ckpt = load_checkpoint(a.model);
  const FeatureConfig featcfg = FeatureFlags::from_extras(ckpt.config);
  const std::vector<std::string> vocab = checkpoint_vocab(ckpt.config);
  const size_t C = ckpt.model->num_classes();
  if (vocab.size() != C)
    throw DataError("checkpoint vocab length disagrees with num_classes");

  std::vector<std::pair<std::string, std::string>> inputs;  // (id, path)
  if (!a.manifest.empty()) {
    const DatasetManifest man = load_manifest(a.manifest);
    if (man.vocab != vocab)
      throw DataError("manifest vocabulary disagrees with checkpoint");
    for (const ManifestEntry& e : man.entries)
      inputs.emplace_back(fs::path(e.wav).stem().string(),
                          (fs::path(man.base_dir) / e.wav).string());
  }
  for (const std::string& wav : a.wavs)
    inputs.emplace_back(fs::path(wav).stem().string(), wav);
  if (inputs.empty())
    throw UsageError("predict: provide --manifest and/or --wav inputs");

  fs::create_directories(a.out);

  // features in parallel, forward serially (the model mutates caches)
  std::vector<FeatureMatrix> feats(inputs.size());
  parallel_for(inputs.size(), a.threads, [&](size_t i) {
    feats[i] = extract_mbe(read_wav(inputs[i].second), featcfg);
  });

  std::vector<std::pair<std::string, std::set<std::string>>> weak_rows;
  std::vector<std::tuple<std::string, double, double, std::string>> strong_rows;

  for (size_t i = 0; i < inputs.size(); ++i) {
    const FeatureMatrix& fm = feats[i];
    const size_t T = fm.frames;
    Tensor x({1, T, fm.bands});
    std::copy(fm.values.begin(), fm.values.end(), x.data());
    const ModelOutput out = ckpt.model->forward(x, RunMode::kInfer);

    const std::string wav_name = inputs[i].first + ".wav";
    const std::string stem = (fs::path(a.out) / inputs[i].first).string();
    std::vector<double> grid(out.strong.data(), out.strong.data() + T * C);
    if (a.format == "csv")
      write_matrix_csv(stem + ".strong.csv", T, C, grid);
    else
      write_matrix(stem + ".strong.bin", T, C, grid);

    std::vector<uint8_t> binary(T * C);
    for (size_t j = 0; j < T * C; ++j)
      binary[j] = grid[j] >= a.threshold ? 1 : 0;

    std::set<std::string> weak_labels;
    for (size_t c : weak_from_strong(grid.data(), T, C, a.threshold))
      weak_labels.insert(vocab[c]);
    weak_rows.emplace_back(wav_name, weak_labels);

    for (const Event& e : decode_events(binary, T, C, fm.frame_hop_s,
                                        a.min_gap_s, a.min_event_s))
      strong_rows.emplace_back(wav_name, e.onset_s, e.offset_s,
                               vocab[e.class_index]);
  }

  write_weak_file((fs::path(a.out) / "est_weak.tsv").string(), weak_rows);
  write_strong_file((fs::path(a.out) / "est_strong.tsv").string(), strong_rows);
  std::cout << "predicted " << inputs.size() << " clips into " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ref_weak, est_weak, ref_strong, est_strong;
  double segment = 1.0;
  double clip_seconds = 10.0;
  std::string csv;
};

int cmd_eval(const EvalArgs& a) {
  if (a.ref_weak.empty() && a.ref_strong.empty())
    throw UsageError("eval: provide --ref-weak and/or --ref-strong");

  double weak_p = 0, weak_r = 0, weak_f = 0;
  bool have_weak = false;
  if (!a.ref_weak.empty()) {
    if (a.est_weak.empty())
      throw UsageError("eval: --ref-weak requires --est-weak");
    const auto ref = read_weak_file(a.ref_weak);
    const auto est = read_weak_file(a.est_weak);
    std::set<std::string> clips;
    for (const auto& [k, v] : ref) clips.insert(k);
    for (const auto& [k, v] : est) clips.insert(k);
    PrfCounts counts;
    for (const std::string& clip : clips) {
      std::set<size_t> r, e;
      std::map<std::string, size_t> ids;  // label name -> dense id
      auto id_of = [&ids](const std::string& l) {
        return ids.emplace(l, ids.size()).first->second;
      };
      if (auto it = ref.find(clip); it != ref.end())
        for (const std::string& l : it->second) r.insert(id_of(l));
      if (auto it = est.find(clip); it != est.end())
        for (const std::string& l : it->second) e.insert(id_of(l));
      counts.accumulate(e, r);
    }
    const PrfResult prf = prf_from_counts(counts);
    weak_p = prf.precision;
    weak_r = prf.recall;
    weak_f = prf.f_score;
    have_weak = true;
    std::printf("Weak labels:   P %6.2f  R %6.2f  F %6.2f\n", weak_p, weak_r,
                weak_f);
  }

  double er = 0, seg_f_val = 0;
  bool have_strong = false;
  if (!a.ref_strong.empty()) {
    if (a.est_strong.empty())
      throw UsageError("eval: --ref-strong requires --est-strong");
    const auto ref = read_strong_file(a.ref_strong);
    const auto est = read_strong_file(a.est_strong);

    std::vector<std::string> vocab;
    {
      std::set<std::string> labels;
      for (const auto& [clip, events] : ref)
        for (const auto& [on, off, l] : events) labels.insert(l);
      for (const auto& [clip, events] : est)
        for (const auto& [on, off, l] : events) labels.insert(l);
      vocab.assign(labels.begin(), labels.end());
    }
    auto index_of = [&vocab](const std::string& l) {
      return static_cast<size_t>(
          std::lower_bound(vocab.begin(), vocab.end(), l) - vocab.begin());
    };

    std::set<std::string> clips;
    for (const auto& [k, v] : ref) clips.insert(k);
    for (const auto& [k, v] : est) clips.insert(k);

    SegmentCounts counts;
    for (const std::string& clip : clips) {
      EventList rl, el;
      if (auto it = ref.find(clip); it != ref.end())
        for (const auto& [on, off, l] : it->second)
          rl.push_back({index_of(l), on, off});
      if (auto it = est.find(clip); it != est.end())
        for (const auto& [on, off, l] : it->second)
          el.push_back({index_of(l), on, off});
      const ActivityGrid rg =
          segment_activity(rl, vocab.size(), a.segment, a.clip_seconds);
      const ActivityGrid eg =
          segment_activity(el, vocab.size(), a.segment, a.clip_seconds);
      counts.accumulate(rg, eg);
    }
    seg_f_val = segment_f(counts);
    er = segment_er(counts);
    have_strong = true;
    std::printf("Strong labels: ER %5.2f  F %6.2f\n", er, seg_f_val);
  }

  if (!a.csv.empty()) {
    std::ofstream f(a.csv, std::ios::trunc);
    if (!f) throw DataError("cannot write csv report: " + a.csv);
    f << "weak_p,weak_r,weak_f,strong_er,strong_seg_f\n";
    f << (have_weak ? csv_num(weak_p) : "") << ","
      << (have_weak ? csv_num(weak_r) : "") << ","
      << (have_weak ? csv_num(weak_f) : "") << ","
      << (have_strong ? csv_num(er) : "") << ","
      << (have_strong ? csv_num(seg_f_val) : "") << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  uint64_t seed = 1;
  int rounds = 20;
  double tol = 1e-4;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto reports = run_all_grad_checks(a.seed, a.rounds, a.inject_fault);
  bool all_pass = true;
  for (const GradCheckReport& r : reports) {
    const bool pass = r.max_err < a.tol;
    all_pass = all_pass && pass;
    std::printf("%-14s max_rel_err %.3e over %d rounds  %s\n", r.op.c_str(),
                r.max_err, r.rounds, pass ? "PASS" : "FAIL");
  }
  if (!all_pass) throw NumericError("gradient check failed");
  return 0;
}

// ---------------------------------------------------------------------------

struct SaliencyArgs {
  std::string model, wav, out;
  std::string cls;
  std::string head = "both";
};

int cmd_saliency(const SaliencyArgs& a) {
  LoadedCheckpoint ckpt = load_checkpoint(a.model);
  const FeatureConfig featcfg = FeatureFlags::from_extras(ckpt.config);
  const std::vector<std::string> vocab = checkpoint_vocab(ckpt.config);

  size_t class_index = vocab.size();
  for (size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i] == a.cls) class_index = i;
  if (class_index == vocab.size()) {
    try {
      class_index = std::stoull(a.cls);
    } catch (const std::exception&) {
      throw UsageError("unknown class '" + a.cls + "'");
    }
    if (class_index >= vocab.size())
      throw UsageError("class index out of range: " + a.cls);
  }

  const FeatureMatrix fm = extract_mbe(read_wav(a.wav), featcfg);
  Tensor feats({fm.frames, fm.bands});
  std::copy(fm.values.begin(), fm.values.end(), feats.data());

  fs::create_directories(a.out);
  auto emit = [&](SaliencyHead head, const std::string& tag) {
    const Tensor map = saliency(*ckpt.model, feats, class_index, head);
    const std::vector<double> vals(map.data(), map.data() + map.size());
    const std::string stem =
        (fs::path(a.out) / ("saliency_" + tag)).string();
    write_matrix(stem + ".bin", fm.frames, fm.bands, vals);
    write_pgm(stem + ".pgm", fm.frames, fm.bands, vals);
    std::cout << "wrote " << stem << ".bin and .pgm\n";
  };

  if (a.head == "strong" || a.head == "both")
    emit(SaliencyHead::kStrong, "strong");
  if (a.head == "weak" || a.head == "both") emit(SaliencyHead::kWeak, "weak");
  if (a.head != "strong" && a.head != "weak" && a.head != "both")
    throw UsageError("--head must be strong, weak or both");
  return 0;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  TrainArgs train;
  std::string weights = "0.002,0.02,0.2,1";
  std::string out_csv = "sweep.csv";
};

int cmd_sweep(const SweepArgs& a) {
  const std::vector<double> weights = parse_double_list(a.weights);
  if (weights.empty()) throw UsageError("sweep: weight list is empty");
  const auto pairs = sweep_pairs(weights);

  const FeatureConfig featcfg = a.train.feat.to_config();
  const DatasetManifest train_man = load_manifest(a.train.manifest);
  const DatasetManifest val_man = load_manifest(a.train.val_manifest);
  if (train_man.vocab != val_man.vocab)
    throw DataError("train and validation manifests disagree on vocabulary");
  const std::vector<TrainClip> train =
      load_split(train_man, featcfg, a.train.threads);
  const std::vector<TrainClip> val =
      load_split(val_man, featcfg, a.train.threads);

  TrainConfig base;
  base.strong_weight = 1.0;
  base.weak_weight = 1.0;
  base.max_epochs = a.train.epochs;
  base.patience = a.train.patience;
  base.batch_size = a.train.batch;
  base.dropout_rate = a.train.dropout;
  base.lr = a.train.lr;
  base.seed = a.train.seed;
  base.metric_segment_s = a.train.segment;
  base.threshold = a.train.threshold;

  std::ofstream csv(a.out_csv, std::ios::trunc);
  if (!csv) throw DataError("cannot write sweep csv: " + a.out_csv);
  csv << "strong_weight,weak_weight,weak_p,weak_r,weak_f,strong_er,"
         "strong_seg_f\n";

  weight_sweep(
      [&]() { return build_model_from_args(a.train, train_man.vocab.size()); },
      train, val, base, pairs, [&](const SweepRow& row) {
        csv << csv_num(row.strong_weight) << "," << csv_num(row.weak_weight)
            << "," << csv_num(row.weak_p) << "," << csv_num(row.weak_r) << ","
            << csv_num(row.weak_f) << "," << csv_num(row.er) << ","
            << csv_num(row.seg_f) << "\n";
        csv.flush();
        std::cout << "sweep " << row.strong_weight << "/" << row.weak_weight
                  << ": weak F " << csv_num(row.weak_f) << " ER "
                  << csv_num(row.er) << "\n";
      });
  std::cout << "sweep table written to " << a.out_csv << "\n";
  return 0;
}

void add_train_options(CLI::App* cmd, TrainArgs& a, bool for_sweep = false) {
  cmd->set_config("--config", "", "Config file with key = value lines");
  cmd->add_option("--manifest", a.manifest, "Training manifest")->required();
  cmd->add_option("--val-manifest", a.val_manifest, "Validation manifest")
      ->required();
  if (!for_sweep) {
    cmd->add_option("--out", a.out, "Output directory")->required();
    cmd->add_option("--strong-weight", a.strong_weight, "Strong loss weight");
    cmd->add_option("--weak-weight", a.weak_weight, "Weak loss weight");
    cmd->add_option("--model", a.model_type, "Model type: crnn or baseline");
    cmd->add_option("--context", a.context, "Baseline context frames");
  }
  cmd->add_option("--dropout", a.dropout, "Dropout rate for every layer");
  cmd->add_option("--epochs", a.epochs, "Maximum training epochs");
  cmd->add_option("--patience", a.patience, "Early-stopping patience, epochs");
  cmd->add_option("--batch", a.batch, "Minibatch size, clips");
  cmd->add_option("--lr", a.lr, "Adam learning rate");
  cmd->add_option("--seed", a.seed, "RNG seed");
  cmd->add_option("--threshold", a.threshold, "Binarization threshold");
  cmd->add_option("--segment", a.segment, "Metric segment length, seconds");
  cmd->add_option("--filters", a.filters, "Conv filters per layer, e.g. 8,8");
  cmd->add_option("--pools", a.pools, "Frequency pool factors, e.g. 8,5");
  cmd->add_option("--gru", a.gru, "GRU units per direction");
  cmd->add_option("--strong-dense", a.strong_hidden,
                  "Strong head hidden widths (final C layer is implicit)");
  cmd->add_option("--weak-dense", a.weak_hidden,
                  "Weak head hidden widths (final C layer is implicit)");
  cmd->add_option("--threads", a.threads, "Worker threads for features");
  cmd->add_flag("--quiet", a.quiet, "Suppress per-epoch stdout");
  a.feat.add_options(cmd);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly-supervised sound event detection toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand(
      "synth", "Generate a synthetic labeled dataset");
  synth->set_config("--config", "", "Config file with key = value lines");
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--clips", synth_args.clips, "Number of clips");
  synth->add_option("--classes", synth_args.classes, "Number of classes");
  synth->add_option("--seed", synth_args.seed, "RNG seed");
  synth->add_option("--clip-seconds", synth_args.clip_seconds, "Clip length");
  synth->add_option("--sr", synth_args.sample_rate, "Sample rate, Hz");
  synth->add_option("--polyphony", synth_args.polyphony,
                    "Maximum events per clip");
  synth->add_option("--background-db", synth_args.background_db,
                    "Background noise level, dB");
  synth->add_option("--split", synth_args.split, "Split name");
  synth->add_flag("--overlapping", synth_args.overlapping,
                  "Use the spectrally overlapping class preset");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "Train a detector");
  add_train_options(train, train_args);

  PredictArgs predict_args;
  CLI::App* predict =
      app.add_subcommand("predict", "Run a checkpoint over audio");
  predict->set_config("--config", "", "Config file with key = value lines");
  predict->add_option("--model", predict_args.model, "Checkpoint file")
      ->required();
  predict->add_option("--manifest", predict_args.manifest, "Input manifest");
  predict->add_option("--wav", predict_args.wavs, "Input wav file(s)");
  predict->add_option("--out", predict_args.out, "Output directory")
      ->required();
  predict->add_option("--threshold", predict_args.threshold,
                      "Binarization threshold");
  predict->add_option("--format", predict_args.format,
                      "Strong grid format: bin or csv");
  predict->add_option("--min-event-s", predict_args.min_event_s,
                      "Drop decoded events shorter than this");
  predict->add_option("--min-gap-s", predict_args.min_gap_s,
                      "Merge events separated by gaps up to this");
  predict->add_option("--threads", predict_args.threads, "Feature threads");

  EvalArgs eval_args;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Score estimate files against references");
  eval_cmd->set_config("--config", "", "Config file with key = value lines");
  eval_cmd->add_option("--ref-weak", eval_args.ref_weak, "Reference weak tsv");
  eval_cmd->add_option("--est-weak", eval_args.est_weak, "Estimated weak tsv");
  eval_cmd->add_option("--ref-strong", eval_args.ref_strong,
                       "Reference strong tsv");
  eval_cmd->add_option("--est-strong", eval_args.est_strong,
                       "Estimated strong tsv");
  eval_cmd->add_option("--segment", eval_args.segment,
                       "Segment length, seconds");
  eval_cmd->add_option("--clip-seconds", eval_args.clip_seconds,
                       "Clip duration for segmentation");
  eval_cmd->add_option("--csv", eval_args.csv, "Also write a csv report");

  GradcheckArgs gradcheck_args;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of every operator");
  gradcheck->add_option("--seed", gradcheck_args.seed, "RNG seed");
  gradcheck->add_option("--rounds", gradcheck_args.rounds,
                        "Random shapes per operator");
  gradcheck->add_option("--tol", gradcheck_args.tol, "Max relative error");
  gradcheck->add_option("--inject-fault", gradcheck_args.inject_fault,
                        "Corrupt one gradient of the named op (self-test)");

  SaliencyArgs saliency_args;
  CLI::App* saliency_cmd =
      app.add_subcommand("saliency", "Input-gradient map for one class");
  saliency_cmd->add_option("--model", saliency_args.model, "Checkpoint file")
      ->required();
  saliency_cmd->add_option("--wav", saliency_args.wav, "Input wav")->required();
  saliency_cmd->add_option("--class", saliency_args.cls,
                           "Class name or index")
      ->required();
  saliency_cmd->add_option("--head", saliency_args.head,
                           "strong, weak or both");
  saliency_cmd->add_option("--out", saliency_args.out, "Output directory")
      ->required();

  SweepArgs sweep_args;
  CLI::App* sweep =
      app.add_subcommand("sweep", "Loss-weight sweep over the standard pairs");
  add_train_options(sweep, sweep_args.train, /*for_sweep=*/true);
  sweep->add_option("--weights", sweep_args.weights,
                    "Comma-separated weight set");
  sweep->add_option("--out", sweep_args.out_csv, "Output csv path");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_args);
    if (train->parsed()) return cmd_train(train_args);
    if (predict->parsed()) return cmd_predict(predict_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_args);
    if (saliency_cmd->parsed()) return cmd_saliency(saliency_args);
    if (sweep->parsed()) return cmd_sweep(sweep_args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {  // DataError, ShapeError, parse problems
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

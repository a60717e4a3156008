#include "wsed/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "wsed/optimizer.hpp"

namespace wsed {

void TrainConfig::validate() const {
  if (strong_weight < 0.0 || weak_weight < 0.0)
    throw UsageError("train config: loss weights must be nonnegative");
  if (strong_weight == 0.0 && weak_weight == 0.0)
    throw UsageError("train config: loss weights cannot both be zero");
  if (max_epochs == 0) throw UsageError("train config: max_epochs must be >= 1");
  if (patience >= max_epochs)
    throw UsageError("train config: patience must be < max_epochs");
  if (batch_size == 0) throw UsageError("train config: batch_size must be >= 1");
  if (lr <= 0.0) throw UsageError("train config: lr must be positive");
  if (threshold < 0.0 || threshold > 1.0)
    throw UsageError("train config: threshold must be in [0, 1]");
  if (metric_segment_s <= 0.0)
    throw UsageError("train config: metric segment must be positive");
}

Tensor replicate_weak_to_strong(const std::vector<uint8_t>& weak,
                                size_t frames) {
  if (frames == 0) throw UsageError("replicate_weak_to_strong: frames >= 1");
  const size_t C = weak.size();
  Tensor grid({frames, C});
  for (size_t t = 0; t < frames; ++t)
    for (size_t c = 0; c < C; ++c)
      grid.v(t * C + c) = weak[c] ? 1.0 : 0.0;
  return grid;
}

std::set<size_t> weak_from_strong(const double* strong, size_t frames,
                                  size_t classes, double threshold) {
  std::set<size_t> out;
  for (size_t c = 0; c < classes; ++c) {
    for (size_t t = 0; t < frames; ++t) {
      if (strong[t * classes + c] >= threshold) {
        out.insert(c);
        break;
      }
    }
  }
  return out;
}

std::set<size_t> weak_from_strong(const Tensor& strong, double threshold) {
  if (strong.rank() != 2)
    throw ShapeError("weak_from_strong: expected [T,C] grid");
  return weak_from_strong(strong.data(), strong.dim(0), strong.dim(1),
                          threshold);
}

EventList decode_events(const std::vector<uint8_t>& binary_grid, size_t frames,
                        size_t classes, double frame_hop_s, double min_gap_s,
                        double min_event_s) {
  if (binary_grid.size() != frames * classes)
    throw ShapeError("decode_events: grid size mismatch");
  if (frame_hop_s <= 0) throw UsageError("decode_events: hop must be positive");
  EventList events;
  for (size_t c = 0; c < classes; ++c) {
    std::vector<std::pair<double, double>> runs;
    size_t t = 0;
    while (t < frames) {
      if (!binary_grid[t * classes + c]) {
        ++t;
        continue;
      }
      size_t end = t;
      while (end + 1 < frames && binary_grid[(end + 1) * classes + c]) ++end;
      runs.emplace_back(t * frame_hop_s, (end + 1) * frame_hop_s);
      t = end + 1;
    }
    if (min_gap_s > 0.0 && runs.size() > 1) {
      std::vector<std::pair<double, double>> merged{runs.front()};
      for (size_t i = 1; i < runs.size(); ++i) {
        if (runs[i].first - merged.back().second <= min_gap_s)
          merged.back().second = runs[i].second;
        else
          merged.push_back(runs[i]);
      }
      runs = std::move(merged);
    }
    for (const auto& [onset, offset] : runs)
      if (offset - onset >= min_event_s) events.push_back({c, onset, offset});
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.onset_s != b.onset_s ? a.onset_s < b.onset_s
                                  : a.class_index < b.class_index;
  });
  return events;
}

double training_metric(double weak_f_percent, double strong_er) {
  if (weak_f_percent < 0.0 || weak_f_percent > 100.0)
    throw UsageError("training_metric: weak F must be in [0, 100]");
  if (strong_er < 0.0)
    throw UsageError("training_metric: ER must be nonnegative");
  return weak_f_percent / 100.0 - strong_er;
}

double combined_loss(const Tensor& strong_pred, const Tensor& strong_target,
                     const Tensor& weak_pred, const Tensor& weak_target,
                     double strong_weight, double weak_weight) {
  if (strong_weight < 0.0 || weak_weight < 0.0 ||
      (strong_weight == 0.0 && weak_weight == 0.0))
    throw UsageError("combined_loss: invalid weights");
  return strong_weight * bce_loss(strong_pred, strong_target) +
         weak_weight * bce_loss(weak_pred, weak_target);
}

double combined_loss_with_grad(const Tensor& strong_pred,
                               const Tensor& strong_target,
                               const Tensor& weak_pred,
                               const Tensor& weak_target, double strong_weight,
                               double weak_weight, Tensor& dstrong,
                               Tensor& dweak) {
  if (strong_weight < 0.0 || weak_weight < 0.0 ||
      (strong_weight == 0.0 && weak_weight == 0.0))
    throw UsageError("combined_loss: invalid weights");
  const double ls =
      bce_loss_with_grad(strong_pred, strong_target, strong_weight, dstrong);
  const double lw =
      bce_loss_with_grad(weak_pred, weak_target, weak_weight, dweak);
  return strong_weight * ls + weak_weight * lw;
}

namespace {

void check_uniform_clips(const std::vector<TrainClip>& clips,
                         size_t num_classes, const char* what) {
  if (clips.empty()) throw UsageError(std::string(what) + " set is empty");
  const size_t T = clips.front().feats.frames;
  const size_t F = clips.front().feats.bands;
  for (const TrainClip& c : clips) {
    if (c.feats.frames != T || c.feats.bands != F)
      throw UsageError(std::string(what) +
                       " set mixes clip lengths; all clips must share T and F");
    if (c.weak.size() != num_classes)
      throw ShapeError(std::string(what) + " clip weak label length mismatch");
  }
}

// Gathers clips[idx[lo..hi)] into x [B,T,F] and targets.
void fill_batch(const std::vector<TrainClip>& clips,
                const std::vector<size_t>& idx, size_t lo, size_t hi,
                size_t num_classes, Tensor& x, Tensor& strong_t,
                Tensor& weak_t) {
  const size_t B = hi - lo;
  const size_t T = clips.front().feats.frames;
  const size_t F = clips.front().feats.bands;
  x = Tensor({B, T, F});
  strong_t = Tensor({B, T, num_classes});
  weak_t = Tensor({B, num_classes});
  for (size_t b = 0; b < B; ++b) {
    const TrainClip& clip = clips[idx[lo + b]];
    std::copy(clip.feats.values.begin(), clip.feats.values.end(),
              x.data() + b * T * F);
    for (size_t c = 0; c < num_classes; ++c) {
      const double y = clip.weak[c] ? 1.0 : 0.0;
      weak_t.v(b * num_classes + c) = y;
      for (size_t t = 0; t < T; ++t)
        strong_t.v((b * T + t) * num_classes + c) = y;
    }
  }
}

}  // namespace

SplitEval evaluate_split(SedModel& model, const std::vector<TrainClip>& clips,
                         double segment_s, double threshold,
                         size_t batch_size) {
  check_uniform_clips(clips, model.num_classes(), "evaluation");
  const size_t C = model.num_classes();
  const size_t T = clips.front().feats.frames;
  const size_t F = clips.front().feats.bands;

  PrfCounts weak_counts;
  SegmentCounts seg_counts;
  bool any_strong = false;

  std::vector<size_t> idx(clips.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  for (size_t lo = 0; lo < clips.size(); lo += batch_size) {
    const size_t hi = std::min(clips.size(), lo + batch_size);
    const size_t B = hi - lo;
    Tensor x({B, T, F});
    for (size_t b = 0; b < B; ++b)
      std::copy(clips[lo + b].feats.values.begin(),
                clips[lo + b].feats.values.end(), x.data() + b * T * F);
    ModelOutput out = model.forward(x, RunMode::kInfer);

    for (size_t b = 0; b < B; ++b) {
      const TrainClip& clip = clips[lo + b];
      const double* strong = out.strong.data() + b * T * C;

      std::set<size_t> ref_weak;
      for (size_t c = 0; c < C; ++c)
        if (clip.weak[c]) ref_weak.insert(c);
      weak_counts.accumulate(weak_from_strong(strong, T, C, threshold),
                             ref_weak);

      if (clip.has_events) {
        any_strong = true;
        std::vector<uint8_t> binary(T * C, 0);
        for (size_t i = 0; i < T * C; ++i)
          binary[i] = strong[i] >= threshold ? 1 : 0;
        const double duration =
            clip.duration_s > 0 ? clip.duration_s
                                : T * clip.feats.frame_hop_s;
        ActivityGrid pred =
            segment_activity(binary, T, C, clip.feats.frame_hop_s, segment_s,
                             duration);
        ActivityGrid ref = segment_activity(clip.events, C, segment_s, duration);
        seg_counts.accumulate(ref, pred);
      }
    }
  }

  SplitEval eval;
  const PrfResult prf = prf_from_counts(weak_counts);
  eval.weak_p = prf.precision;
  eval.weak_r = prf.recall;
  eval.weak_f = prf.f_score;
  eval.has_strong = any_strong;
  if (any_strong) {
    eval.seg_f = segment_f(seg_counts);
    eval.er = segment_er(seg_counts);
  }
  return eval;
}

FitResult fit(SedModel& model, const std::vector<TrainClip>& train,
              const std::vector<TrainClip>& validation, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  const size_t C = model.num_classes();
  check_uniform_clips(train, C, "training");
  check_uniform_clips(validation, C, "validation");

  std::vector<Tensor*> params;
  for (auto& [name, t] : model.named_params()) params.push_back(t);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  Adam adam(params, adam_cfg);

  Rng rng(cfg.seed);
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  // parameter/state snapshot of the best epoch
  auto snapshot_tensors = [&model]() {
    std::vector<std::vector<double>> snap;
    for (auto& [name, t] : model.named_params())
      snap.emplace_back(t->data(), t->data() + t->size());
    for (auto& [name, t] : model.named_state())
      snap.emplace_back(t->data(), t->data() + t->size());
    return snap;
  };
  auto restore_tensors = [&model](const std::vector<std::vector<double>>& snap) {
    size_t k = 0;
    for (auto& [name, t] : model.named_params())
      std::copy(snap[k].begin(), snap[k].end(), t->data()), ++k;
    for (auto& [name, t] : model.named_state())
      std::copy(snap[k].begin(), snap[k].end(), t->data()), ++k;
  };

  FitResult result;
  std::vector<std::vector<double>> best_snapshot;
  double best_metric = -INFINITY;
  size_t best_epoch = 0;

  const bool weak_head = model.has_weak_head();

  for (size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // seeded Fisher-Yates shuffle
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }

    double strong_loss_sum = 0.0, weak_loss_sum = 0.0;
    size_t clip_count = 0;

    for (size_t lo = 0; lo < train.size(); lo += cfg.batch_size) {
      const size_t hi = std::min(train.size(), lo + cfg.batch_size);
      Tensor x, strong_t, weak_t;
      fill_batch(train, order, lo, hi, C, x, strong_t, weak_t);

      ModelOutput out = model.forward(x, RunMode::kTrain);

      Tensor dstrong(out.strong.shape());
      const double ls = bce_loss_with_grad(out.strong, strong_t,
                                           cfg.strong_weight, dstrong);
      double lw = 0.0;
      Tensor dweak;
      if (weak_head) {
        dweak = Tensor(out.weak.shape());
        lw = bce_loss_with_grad(out.weak, weak_t, cfg.weak_weight, dweak);
      }
      const double total = cfg.strong_weight * ls + cfg.weak_weight * lw;
      if (!std::isfinite(total))
        throw NumericError("NaN/Inf loss at epoch " + std::to_string(epoch) +
                           "; aborting training");

      model.backward(dstrong, weak_head ? &dweak : nullptr);
      adam.step();

      const double batch_clips = static_cast<double>(hi - lo);
      strong_loss_sum += ls * batch_clips;
      weak_loss_sum += lw * batch_clips;
      clip_count += hi - lo;
    }

    EpochReport report;
    report.epoch = epoch;
    report.strong_loss = strong_loss_sum / static_cast<double>(clip_count);
    report.weak_loss = weak_loss_sum / static_cast<double>(clip_count);
    report.total_loss = cfg.strong_weight * report.strong_loss +
                        cfg.weak_weight * report.weak_loss;

    const SplitEval eval = evaluate_split(model, validation,
                                          cfg.metric_segment_s, cfg.threshold,
                                          cfg.batch_size);
    report.weak_p = eval.weak_p;
    report.weak_r = eval.weak_r;
    report.weak_f = eval.weak_f;
    report.has_strong_metrics = eval.has_strong;
    report.strong_er = eval.er;
    report.strong_seg_f = eval.seg_f;
    report.metric = training_metric(eval.weak_f, eval.has_strong ? eval.er : 0.0);

    if (report.metric > best_metric) {
      best_metric = report.metric;
      best_epoch = epoch;
      best_snapshot = snapshot_tensors();
      report.best_so_far = true;
    }
    result.history.push_back(report);
    if (on_epoch) on_epoch(report);

    if (epoch - best_epoch >= cfg.patience) break;
  }

  if (!best_snapshot.empty()) restore_tensors(best_snapshot);
  result.best_epoch = best_epoch;
  result.best_metric = best_metric;
  return result;
}

std::vector<std::pair<double, double>> sweep_pairs(
    const std::vector<double>& weights) {
  if (weights.empty()) throw UsageError("sweep: weight list is empty");
  std::vector<double> sorted = weights;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> pairs;
  for (double w : sorted) pairs.emplace_back(w, sorted.back());
  for (size_t i = sorted.size() - 1; i-- > 0;)
    pairs.emplace_back(sorted.back(), sorted[i]);
  return pairs;
}

std::vector<SweepRow> weight_sweep(
    const ModelFactory& make_model, const std::vector<TrainClip>& train,
    const std::vector<TrainClip>& validation, const TrainConfig& base_cfg,
    const std::vector<std::pair<double, double>>& pairs,
    const std::function<void(const SweepRow&)>& on_row) {
  std::vector<SweepRow> rows;
  for (const auto& [ws, ww] : pairs) {
    std::unique_ptr<SedModel> model = make_model();
    TrainConfig cfg = base_cfg;
    cfg.strong_weight = ws;
    cfg.weak_weight = ww;
    fit(*model, train, validation, cfg);
    const SplitEval eval = evaluate_split(*model, validation,
                                          cfg.metric_segment_s, cfg.threshold,
                                          cfg.batch_size);
    SweepRow row;
    row.strong_weight = ws;
    row.weak_weight = ww;
    row.weak_p = eval.weak_p;
    row.weak_r = eval.weak_r;
    row.weak_f = eval.weak_f;
    row.er = eval.has_strong ? eval.er : 0.0;
    row.seg_f = eval.seg_f;
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

}  // namespace wsed

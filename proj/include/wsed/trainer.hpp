#pragma once

#include <functional>
#include <optional>
#include <set>
#include <vector>

#include "wsed/audio.hpp"
#include "wsed/metrics.hpp"
#include "wsed/model.hpp"

namespace wsed {

struct TrainConfig {
  double strong_weight = 1.0;
  double weak_weight = 1.0;
  size_t max_epochs = 1000;
  size_t patience = 100;
  size_t batch_size = 32;
  double dropout_rate = 0.15;  // rate the model was built with, for reporting
  double lr = 1e-3;
  uint64_t seed = 1;
  double metric_segment_s = 1.0;
  double threshold = 0.5;

  void validate() const;
};

struct EpochReport {
  size_t epoch = 0;  // 1-based
  double strong_loss = 0.0;
  double weak_loss = 0.0;
  double total_loss = 0.0;
  double weak_p = 0.0, weak_r = 0.0, weak_f = 0.0;  // validation, percent
  double strong_er = 0.0, strong_seg_f = 0.0;       // validation
  bool has_strong_metrics = false;
  double metric = 0.0;
  bool best_so_far = false;
};

// A clip ready for the training loop: features plus labels. `events` may be
// empty for training clips (the trainer never looks at them); validation
// clips need them for the ER part of the training metric.
struct TrainClip {
  FeatureMatrix feats;
  std::vector<uint8_t> weak;  // length C
  EventList events;
  bool has_events = false;
  double duration_s = 0.0;
};

// Training strong targets: every frame is a copy of the weak label vector.
Tensor replicate_weak_to_strong(const std::vector<uint8_t>& weak, size_t frames);

// Class c is predicted iff max over frames of strong[t][c] >= threshold.
std::set<size_t> weak_from_strong(const double* strong, size_t frames,
                                  size_t classes, double threshold = 0.5);
std::set<size_t> weak_from_strong(const Tensor& strong,
                                  double threshold = 0.5);

// Maximal runs of consecutive active frames become events in seconds.
// Optional post-processing: merge events separated by gaps up to min_gap_s,
// then drop events shorter than min_event_s.
EventList decode_events(const std::vector<uint8_t>& binary_grid, size_t frames,
                        size_t classes, double frame_hop_s,
                        double min_gap_s = 0.0, double min_event_s = 0.0);

// Early-stopping score, maximized: weak F (percent) scaled to [0,1] minus
// strong ER, so the ideal (F=100, ER=0) scores 1.
double training_metric(double weak_f_percent, double strong_er);

// w_s * BCE(strong) + w_w * BCE(weak), both mean-reduced.
double combined_loss(const Tensor& strong_pred, const Tensor& strong_target,
                     const Tensor& weak_pred, const Tensor& weak_target,
                     double strong_weight, double weak_weight);
// Also accumulates the per-head gradients (scaled by their weights) into
// dstrong/dweak values.
double combined_loss_with_grad(const Tensor& strong_pred,
                               const Tensor& strong_target,
                               const Tensor& weak_pred,
                               const Tensor& weak_target, double strong_weight,
                               double weak_weight, Tensor& dstrong,
                               Tensor& dweak);

struct SplitEval {
  double weak_p = 0.0, weak_r = 0.0, weak_f = 0.0;
  bool has_strong = false;
  double er = 0.0, seg_f = 0.0;
};

// Forward every clip (infer mode), threshold, derive weak labels from the
// strong grid, micro-average both metric families over the split.
SplitEval evaluate_split(SedModel& model, const std::vector<TrainClip>& clips,
                         double segment_s = 1.0, double threshold = 0.5,
                         size_t batch_size = 32);

using EpochCallback = std::function<void(const EpochReport&)>;

struct FitResult {
  std::vector<EpochReport> history;
  size_t best_epoch = 0;  // 1-based
  double best_metric = 0.0;
};

// Epoch loop: seeded shuffle, minibatches, combined loss, Adam, per-epoch
// validation metrics, early stopping on the training metric. On return the
// model holds the best epoch's parameters and batch-norm state.
FitResult fit(SedModel& model, const std::vector<TrainClip>& train,
              const std::vector<TrainClip>& validation, const TrainConfig& cfg,
              const EpochCallback& on_epoch = nullptr);

struct SweepRow {
  double strong_weight = 0.0, weak_weight = 0.0;
  double weak_p = 0.0, weak_r = 0.0, weak_f = 0.0;
  double er = 0.0, seg_f = 0.0;
};

// The canonical sweep pairs (w,1) for each w ascending, then (1,w)
// descending, built from a weight list such as {0.002, 0.02, 0.2, 1}.
std::vector<std::pair<double, double>> sweep_pairs(
    const std::vector<double>& weights);

using ModelFactory = std::function<std::unique_ptr<SedModel>()>;

// Trains one fresh model per weight pair and reports validation metrics.
std::vector<SweepRow> weight_sweep(
    const ModelFactory& make_model, const std::vector<TrainClip>& train,
    const std::vector<TrainClip>& validation, const TrainConfig& base_cfg,
    const std::vector<std::pair<double, double>>& pairs,
    const std::function<void(const SweepRow&)>& on_row = nullptr);

}  // namespace wsed

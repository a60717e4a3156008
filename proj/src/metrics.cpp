#include "wsed/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace wsed {

ActivityGrid make_activity_grid(size_t segments, size_t classes) {
  ActivityGrid g;
  g.segments = segments;
  g.classes = classes;
  g.active.assign(segments * classes, 0);
  return g;
}

namespace {

size_t segments_for(double duration_s, double segment_s) {
  if (segment_s <= 0) throw UsageError("segment length must be positive");
  if (duration_s <= 0) throw UsageError("duration must be positive");
  return static_cast<size_t>(std::ceil(duration_s / segment_s - 1e-12));
}

}  // namespace

ActivityGrid segment_activity(const EventList& events, size_t num_classes,
                              double segment_s, double duration_s) {
  const size_t K = segments_for(duration_s, segment_s);
  ActivityGrid g = make_activity_grid(K, num_classes);
  for (const Event& e : events) {
    if (e.class_index >= num_classes)
      throw DataError("event class index out of range");
    const double onset = std::max(0.0, std::min(e.onset_s, duration_s));
    const double offset = std::max(0.0, std::min(e.offset_s, duration_s));
    if (offset <= onset) continue;
    size_t k = static_cast<size_t>(std::floor(onset / segment_s));
    for (; k < K && k * segment_s < offset; ++k)
      g.set(k, e.class_index, true);
  }
  return g;
}

ActivityGrid segment_activity(const std::vector<uint8_t>& frame_grid,
                              size_t frames, size_t num_classes,
                              double frame_hop_s, double segment_s,
                              double duration_s) {
  if (frame_grid.size() != frames * num_classes)
    throw ShapeError("segment_activity: frame grid size mismatch");
  if (frame_hop_s <= 0) throw UsageError("frame hop must be positive");
  const size_t K = segments_for(duration_s, segment_s);
  ActivityGrid g = make_activity_grid(K, num_classes);
  for (size_t t = 0; t < frames; ++t) {
    const double start = t * frame_hop_s;
    const double end = (t + 1) * frame_hop_s;
    size_t k = static_cast<size_t>(std::floor(start / segment_s));
    for (; k < K && k * segment_s < end; ++k)
      for (size_t c = 0; c < num_classes; ++c)
        if (frame_grid[t * num_classes + c]) g.set(k, c, true);
  }
  return g;
}

void SegmentCounts::accumulate(const ActivityGrid& ref,
                               const ActivityGrid& pred) {
  if (ref.segments != pred.segments || ref.classes != pred.classes)
    throw ShapeError("segment counts: grid shape mismatch");
  for (size_t k = 0; k < ref.segments; ++k) {
    uint64_t tp_k = 0, fp_k = 0, fn_k = 0, n_k = 0;
    for (size_t c = 0; c < ref.classes; ++c) {
      const bool r = ref.at(k, c), p = pred.at(k, c);
      n_k += r;
      if (r && p) ++tp_k;
      if (!r && p) ++fp_k;
      if (r && !p) ++fn_k;
    }
    tp += tp_k;
    fp += fp_k;
    fn += fn_k;
    n += n_k;
    sub += std::min(fn_k, fp_k);
    del += fn_k > fp_k ? fn_k - fp_k : 0;
    ins += fp_k > fn_k ? fp_k - fn_k : 0;
  }
}

double segment_f(const SegmentCounts& c) {
  const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
  if (denom == 0.0) return 0.0;
  return 100.0 * 2.0 * static_cast<double>(c.tp) / denom;
}

double segment_f(const ActivityGrid& ref, const ActivityGrid& pred) {
  SegmentCounts c;
  c.accumulate(ref, pred);
  return segment_f(c);
}

double segment_er(const SegmentCounts& c) {
  if (c.n == 0)
    throw DataError("segment_er: reference has no active labels");
  return static_cast<double>(c.sub + c.del + c.ins) / static_cast<double>(c.n);
}

double segment_er(const ActivityGrid& ref, const ActivityGrid& pred) {
  SegmentCounts c;
  c.accumulate(ref, pred);
  return segment_er(c);
}

void PrfCounts::accumulate(const std::set<size_t>& predicted,
                           const std::set<size_t>& reference) {
  for (size_t c : predicted)
    reference.count(c) ? ++tp : ++fp;
  for (size_t c : reference)
    if (!predicted.count(c)) ++fn;
}

PrfResult prf_from_counts(const PrfCounts& c) {
  PrfResult r;
  if (c.tp + c.fp > 0)
    r.precision = 100.0 * static_cast<double>(c.tp) /
                  static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0)
    r.recall = 100.0 * static_cast<double>(c.tp) /
               static_cast<double>(c.tp + c.fn);
  r.f_score = f_from_pr(r.precision, r.recall);
  return r;
}

PrfResult weak_prf(const std::vector<std::set<size_t>>& predicted,
                   const std::vector<std::set<size_t>>& reference) {
  if (predicted.size() != reference.size())
    throw ShapeError("weak_prf: clip count mismatch");
  PrfCounts counts;
  for (size_t i = 0; i < predicted.size(); ++i)
    counts.accumulate(predicted[i], reference[i]);
  return prf_from_counts(counts);
}

double f_from_pr(double precision, double recall) {
  if (precision + recall <= 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace wsed

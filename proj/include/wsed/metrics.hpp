#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "wsed/common.hpp"

namespace wsed {

struct Event {
  size_t class_index = 0;
  double onset_s = 0.0;
  double offset_s = 0.0;
};
using EventList = std::vector<Event>;

// Binary class activity per one-second (or segment_s) segment: K x C.
struct ActivityGrid {
  size_t segments = 0;
  size_t classes = 0;
  std::vector<uint8_t> active;  // row-major K x C

  uint8_t at(size_t k, size_t c) const { return active[k * classes + c]; }
  void set(size_t k, size_t c, bool v) { active[k * classes + c] = v ? 1 : 0; }
};

ActivityGrid make_activity_grid(size_t segments, size_t classes);

// Rasterizes an event list: a class is active in segment k if any part of an
// event overlaps [k*seg, (k+1)*seg). Events are clipped to [0, duration].
ActivityGrid segment_activity(const EventList& events, size_t num_classes,
                              double segment_s, double duration_s);

// Same rule for a binary frame grid (T x C); frame t covers
// [t*hop, (t+1)*hop).
ActivityGrid segment_activity(const std::vector<uint8_t>& frame_grid,
                              size_t frames, size_t num_classes,
                              double frame_hop_s, double segment_s,
                              double duration_s);

// Aggregated per-segment counts; the substitution/deletion/insertion triplet
// follows S = min(FN, FP), D = max(0, FN-FP), I = max(0, FP-FN) per segment.
struct SegmentCounts {
  uint64_t tp = 0, fp = 0, fn = 0;
  uint64_t n = 0;                    // active reference labels
  uint64_t sub = 0, del = 0, ins = 0;

  void accumulate(const ActivityGrid& ref, const ActivityGrid& pred);
};

// F = 2*TP / (2*TP + FP + FN) as a percentage; 0 on an empty denominator.
double segment_f(const SegmentCounts& counts);
double segment_f(const ActivityGrid& ref, const ActivityGrid& pred);

// ER = (S + D + I) / N; reference with no active labels is an error.
double segment_er(const SegmentCounts& counts);
double segment_er(const ActivityGrid& ref, const ActivityGrid& pred);

// Clip-level (weak) metrics, micro-averaged over all (clip, class) pairs.
struct PrfCounts {
  uint64_t tp = 0, fp = 0, fn = 0;
  void accumulate(const std::set<size_t>& predicted,
                  const std::set<size_t>& reference);
};

struct PrfResult {
  double precision = 0.0;  // percentages
  double recall = 0.0;
  double f_score = 0.0;
};

PrfResult prf_from_counts(const PrfCounts& counts);
PrfResult weak_prf(const std::vector<std::set<size_t>>& predicted,
                   const std::vector<std::set<size_t>>& reference);

// F-score from precision/recall percentages; 0 when P + R == 0.
double f_from_pr(double precision, double recall);

}  // namespace wsed

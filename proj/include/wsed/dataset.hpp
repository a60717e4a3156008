#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "wsed/audio.hpp"
#include "wsed/metrics.hpp"

namespace wsed {

// Spectral archetype of one synthetic sound class.
struct SynthClass {
  std::string name;
  enum class Shape { kToneBurst, kChirp, kNoiseBand } shape = Shape::kToneBurst;
  double center_hz = 1000.0;
  double bandwidth_hz = 0.0;  // chirp sweep span / noise band width
  double min_dur_s = 0.8, max_dur_s = 2.5;
  double min_amp = 0.15, max_amp = 0.4;
};

// Four well-separated classes; the learning tests are meant to be winnable.
std::vector<SynthClass> default_synth_classes(size_t count = 4);
// Same archetypes crowded into a narrow band, for harder experiments.
std::vector<SynthClass> overlapping_synth_classes(size_t count = 4);

struct SynthConfig {
  size_t num_clips = 200;
  double clip_s = 10.0;
  uint32_t sample_rate = 44100;
  size_t polyphony_max = 2;
  double background_db = -40.0;  // relative to nominal event level
  uint64_t seed = 1;
};

struct LabeledClip {
  std::string id;  // filename stem
  AudioClip audio;
  std::set<size_t> weak;
  EventList events;
};

// One event waveform with 10 ms raised-cosine fade-in/out.
std::vector<double> render_event(const SynthClass& cls, double duration_s,
                                 double amplitude, uint32_t sample_rate,
                                 Rng& rng);

// Seeded polyphonic clips; weak labels are the union of event classes and the
// strong event list is kept as ground truth.
std::vector<LabeledClip> generate_dataset(const SynthConfig& cfg,
                                          const std::vector<SynthClass>& classes,
                                          const std::string& id_prefix = "clip");

// ---------------------------------------------------------------------------
// On-disk dataset: WAVs plus tab-separated annotation files.
//   weak:   <wav>\t<label1,label2,...>
//   strong: <wav>\t<onset>\t<offset>\t<label>
//   manifest: header lines (split/vocab/weak/strong) then one clip line per wav

struct ManifestEntry {
  std::string wav;  // relative to the manifest directory
  std::set<size_t> weak;
  EventList events;
  bool has_strong = false;
};

struct DatasetManifest {
  std::string split;
  std::string base_dir;
  std::vector<std::string> vocab;
  std::vector<ManifestEntry> entries;

  size_t class_index(const std::string& label) const;
};

// Writes wavs + weak.tsv + strong.tsv + manifest.tsv into dir.
void write_dataset(const std::string& dir, const std::string& split,
                   const std::vector<LabeledClip>& clips,
                   const std::vector<std::string>& vocab);

DatasetManifest load_manifest(const std::string& path);
LabeledClip load_clip(const DatasetManifest& manifest, size_t index);

// Annotation files on their own (cmd_eval works without a manifest).
std::map<std::string, std::set<std::string>> read_weak_file(
    const std::string& path);
std::map<std::string, std::vector<std::tuple<double, double, std::string>>>
read_strong_file(const std::string& path);

void write_weak_file(const std::string& path,
                     const std::vector<std::pair<std::string,
                                                 std::set<std::string>>>& rows);
void write_strong_file(
    const std::string& path,
    const std::vector<std::tuple<std::string, double, double, std::string>>&
        rows);

}  // namespace wsed

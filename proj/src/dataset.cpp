#include "wsed/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wsed/wav.hpp"

namespace fs = std::filesystem;

namespace wsed {

std::vector<SynthClass> default_synth_classes(size_t count) {
  std::vector<SynthClass> all = {
      {"tone_low", SynthClass::Shape::kToneBurst, 300.0, 0.0},
      {"chirp_mid", SynthClass::Shape::kChirp, 1500.0, 800.0},
      {"tone_high", SynthClass::Shape::kToneBurst, 4500.0, 0.0},
      {"noise_band", SynthClass::Shape::kNoiseBand, 11000.0, 4000.0},
      {"tone_mid", SynthClass::Shape::kToneBurst, 800.0, 0.0},
      {"chirp_high", SynthClass::Shape::kChirp, 7000.0, 2000.0},
  };
  if (count == 0 || count > all.size())
    throw UsageError("default_synth_classes: count must be in 1.." +
                     std::to_string(all.size()));
  all.resize(count);
  return all;
}

std::vector<SynthClass> overlapping_synth_classes(size_t count) {
  std::vector<SynthClass> all = {
      {"tone_a", SynthClass::Shape::kToneBurst, 900.0, 0.0},
      {"tone_b", SynthClass::Shape::kToneBurst, 1100.0, 0.0},
      {"chirp_a", SynthClass::Shape::kChirp, 1000.0, 600.0},
      {"noise_a", SynthClass::Shape::kNoiseBand, 1000.0, 500.0},
  };
  if (count == 0 || count > all.size())
    throw UsageError("overlapping_synth_classes: count must be in 1.." +
                     std::to_string(all.size()));
  all.resize(count);
  return all;
}

std::vector<double> render_event(const SynthClass& cls, double duration_s,
                                 double amplitude, uint32_t sample_rate,
                                 Rng& rng) {
  if (duration_s <= 0) throw UsageError("render_event: duration must be > 0");
  const size_t n = static_cast<size_t>(std::lround(duration_s * sample_rate));
  std::vector<double> out(n, 0.0);
  const double dt = 1.0 / sample_rate;

  switch (cls.shape) {
    case SynthClass::Shape::kToneBurst: {
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      for (size_t i = 0; i < n; ++i)
        out[i] = amplitude *
                 std::sin(2.0 * M_PI * cls.center_hz * i * dt + phase);
      break;
    }
    case SynthClass::Shape::kChirp: {
      const double f0 = cls.center_hz - cls.bandwidth_hz / 2.0;
      const double f1 = cls.center_hz + cls.bandwidth_hz / 2.0;
      const double rate = (f1 - f0) / duration_s;
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      for (size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        out[i] = amplitude *
                 std::sin(2.0 * M_PI * (f0 * t + 0.5 * rate * t * t) + phase);
      }
      break;
    }
    case SynthClass::Shape::kNoiseBand: {
      // random-phase sinusoids across the band: deterministic by seed and
      // spectrally flat enough for a noise archetype
      const size_t components = 64;
      const double f0 = cls.center_hz - cls.bandwidth_hz / 2.0;
      std::vector<double> freqs(components), phases(components);
      for (size_t k = 0; k < components; ++k) {
        freqs[k] = f0 + cls.bandwidth_hz * (k + rng.uniform()) / components;
        phases[k] = rng.uniform(0.0, 2.0 * M_PI);
      }
      double peak = 0.0;
      for (size_t i = 0; i < n; ++i) {
        const double t = i * dt;
        double s = 0.0;
        for (size_t k = 0; k < components; ++k)
          s += std::sin(2.0 * M_PI * freqs[k] * t + phases[k]);
        out[i] = s;
        peak = std::max(peak, std::fabs(s));
      }
      // peak-normalize so mixes of amplitude-bounded events cannot clip
      if (peak > 0.0)
        for (double& s : out) s *= amplitude / peak;
      break;
    }
  }

  // 10 ms raised-cosine fades, shortened for very short events
  const size_t fade = std::min(
      static_cast<size_t>(std::lround(0.010 * sample_rate)), n / 2);
  for (size_t i = 0; i < fade; ++i) {
    const double w = 0.5 * (1.0 - std::cos(M_PI * (i + 1) / (fade + 1)));
    out[i] *= w;
    out[n - 1 - i] *= w;
  }
  return out;
}

std::vector<LabeledClip> generate_dataset(const SynthConfig& cfg,
                                          const std::vector<SynthClass>& classes,
                                          const std::string& id_prefix) {
  if (classes.empty()) throw UsageError("generate_dataset: no classes");
  if (cfg.polyphony_max == 0)
    throw UsageError("generate_dataset: polyphony_max must be >= 1");
  if (cfg.num_clips == 0)
    throw UsageError("generate_dataset: num_clips must be >= 1");
  const double nyquist = cfg.sample_rate / 2.0;
  for (const SynthClass& c : classes) {
    if (c.center_hz + c.bandwidth_hz / 2.0 >= nyquist)
      throw UsageError("synth class '" + c.name + "' exceeds Nyquist");
    if (c.max_dur_s > cfg.clip_s)
      throw UsageError("synth class '" + c.name + "' duration exceeds clip");
  }

  const double background_amp = 0.25 * std::pow(10.0, cfg.background_db / 20.0);

  std::vector<LabeledClip> clips;
  clips.reserve(cfg.num_clips);
  const size_t samples = static_cast<size_t>(std::lround(cfg.clip_s * cfg.sample_rate));
  for (size_t i = 0; i < cfg.num_clips; ++i) {
    // one independent stream per clip, so generation order never matters
    Rng rng(cfg.seed * 2654435761ull + i * 40503ull + 17);

    LabeledClip clip;
    char idbuf[64];
    std::snprintf(idbuf, sizeof(idbuf), "%s_%04zu", id_prefix.c_str(), i);
    clip.id = idbuf;
    clip.audio.sample_rate = cfg.sample_rate;
    clip.audio.samples.assign(samples, 0.0);
    for (double& s : clip.audio.samples) s = background_amp * rng.normal();

    const size_t n_events = 1 + rng.uniform_int(cfg.polyphony_max);
    for (size_t e = 0; e < n_events; ++e) {
      const size_t ci = rng.uniform_int(classes.size());
      const SynthClass& cls = classes[ci];
      const double dur = rng.uniform(cls.min_dur_s, cls.max_dur_s);
      const double onset = rng.uniform(0.0, cfg.clip_s - dur);
      const double amp = rng.uniform(cls.min_amp, cls.max_amp);
      const std::vector<double> wave =
          render_event(cls, dur, amp, cfg.sample_rate, rng);
      const size_t start =
          static_cast<size_t>(std::lround(onset * cfg.sample_rate));
      for (size_t k = 0; k < wave.size() && start + k < samples; ++k)
        clip.audio.samples[start + k] += wave[k];
      clip.events.push_back({ci, onset, onset + dur});
      clip.weak.insert(ci);
    }
    std::sort(clip.events.begin(), clip.events.end(),
              [](const Event& a, const Event& b) {
                return a.onset_s != b.onset_s ? a.onset_s < b.onset_s
                                              : a.class_index < b.class_index;
              });
    clips.push_back(std::move(clip));
  }
  return clips;
}

// ---------------------------------------------------------------------------
// Files

size_t DatasetManifest::class_index(const std::string& label) const {
  for (size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i] == label) return i;
  throw DataError("label '" + label + "' not in vocabulary");
}

namespace {

std::string fmt_time(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", t);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

void write_weak_file(
    const std::string& path,
    const std::vector<std::pair<std::string, std::set<std::string>>>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write weak label file: " + path);
  for (const auto& [wav, labels] : rows) {
    f << wav << "\t";
    size_t i = 0;
    for (const std::string& l : labels) f << (i++ ? "," : "") << l;
    f << "\n";
  }
}

void write_strong_file(
    const std::string& path,
    const std::vector<std::tuple<std::string, double, double, std::string>>&
        rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write strong label file: " + path);
  for (const auto& [wav, onset, offset, label] : rows)
    f << wav << "\t" << fmt_time(onset) << "\t" << fmt_time(offset) << "\t"
      << label << "\n";
}

std::map<std::string, std::set<std::string>> read_weak_file(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open weak label file: " + path);
  std::map<std::string, std::set<std::string>> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.empty() || fields[0].empty())
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": malformed weak label line");
    std::set<std::string>& labels = out[fields[0]];
    if (fields.size() > 1)
      for (const std::string& l : split_commas(fields[1])) labels.insert(l);
  }
  return out;
}

std::map<std::string, std::vector<std::tuple<double, double, std::string>>>
read_strong_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open strong label file: " + path);
  std::map<std::string, std::vector<std::tuple<double, double, std::string>>>
      out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 4)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected <wav>\\t<onset>\\t<offset>\\t<label>");
    double onset, offset;
    try {
      onset = std::stod(fields[1]);
      offset = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": onset/offset not numeric");
    }
    if (!(onset < offset))
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": onset must be < offset");
    out[fields[0]].emplace_back(onset, offset, fields[3]);
  }
  return out;
}

void write_dataset(const std::string& dir, const std::string& split,
                   const std::vector<LabeledClip>& clips,
                   const std::vector<std::string>& vocab) {
  fs::create_directories(dir);

  std::vector<std::pair<std::string, std::set<std::string>>> weak_rows;
  std::vector<std::tuple<std::string, double, double, std::string>> strong_rows;
  for (const LabeledClip& clip : clips) {
    const std::string wav_name = clip.id + ".wav";
    write_wav((fs::path(dir) / wav_name).string(), clip.audio);
    std::set<std::string> labels;
    for (size_t c : clip.weak) labels.insert(vocab.at(c));
    weak_rows.emplace_back(wav_name, labels);
    for (const Event& e : clip.events)
      strong_rows.emplace_back(wav_name, e.onset_s, e.offset_s,
                               vocab.at(e.class_index));
  }
  write_weak_file((fs::path(dir) / "weak.tsv").string(), weak_rows);
  write_strong_file((fs::path(dir) / "strong.tsv").string(), strong_rows);

  std::ofstream m(fs::path(dir) / "manifest.tsv", std::ios::trunc);
  if (!m) throw DataError("cannot write manifest in " + dir);
  m << "split\t" << split << "\n";
  m << "vocab\t";
  for (size_t i = 0; i < vocab.size(); ++i) m << (i ? "," : "") << vocab[i];
  m << "\n";
  m << "weak\tweak.tsv\n";
  m << "strong\tstrong.tsv\n";
  for (const LabeledClip& clip : clips) m << "clip\t" << clip.id << ".wav\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);

  DatasetManifest man;
  man.base_dir = fs::path(path).parent_path().string();
  if (man.base_dir.empty()) man.base_dir = ".";

  std::string weak_file, strong_file;
  std::vector<std::string> clip_files;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() < 2)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected <key>\\t<value>");
    const std::string& key = fields[0];
    if (key == "split") man.split = fields[1];
    else if (key == "vocab") man.vocab = split_commas(fields[1]);
    else if (key == "weak") weak_file = fields[1];
    else if (key == "strong") strong_file = fields[1];
    else if (key == "clip") clip_files.push_back(fields[1]);
    else
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": unknown manifest key '" + key + "'");
  }
  if (man.vocab.empty()) throw DataError(path + ": manifest has no vocab line");
  if (clip_files.empty()) throw DataError(path + ": manifest lists no clips");
  if (weak_file.empty()) throw DataError(path + ": manifest has no weak file");
  {
    std::set<std::string> uniq(clip_files.begin(), clip_files.end());
    if (uniq.size() != clip_files.size())
      throw DataError(path + ": duplicate clip paths in manifest");
  }

  auto weak = read_weak_file((fs::path(man.base_dir) / weak_file).string());
  std::map<std::string, std::vector<std::tuple<double, double, std::string>>>
      strong;
  bool have_strong = false;
  if (!strong_file.empty()) {
    strong = read_strong_file((fs::path(man.base_dir) / strong_file).string());
    have_strong = true;
  }

  for (const std::string& wav : clip_files) {
    ManifestEntry entry;
    entry.wav = wav;
    auto wit = weak.find(wav);
    if (wit == weak.end())
      throw DataError(path + ": clip '" + wav + "' has no weak labels");
    for (const std::string& l : wit->second)
      entry.weak.insert(man.class_index(l));
    if (have_strong) {
      auto sit = strong.find(wav);
      if (sit != strong.end()) {
        for (const auto& [onset, offset, label] : sit->second)
          entry.events.push_back({man.class_index(label), onset, offset});
        entry.has_strong = true;
      }
    }
    man.entries.push_back(std::move(entry));
  }
  return man;
}

LabeledClip load_clip(const DatasetManifest& manifest, size_t index) {
  const ManifestEntry& entry = manifest.entries.at(index);
  LabeledClip clip;
  clip.id = fs::path(entry.wav).stem().string();
  clip.audio = read_wav((fs::path(manifest.base_dir) / entry.wav).string());
  clip.weak = entry.weak;
  clip.events = entry.events;
  if (entry.has_strong) {
    std::set<size_t> from_events;
    for (const Event& e : clip.events) from_events.insert(e.class_index);
    if (from_events != clip.weak)
      throw DataError("clip '" + entry.wav +
                      "': weak labels disagree with strong events");
  }
  return clip;
}

}  // namespace wsed

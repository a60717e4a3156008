#pragma once

#include <cstdint>
#include <vector>

#include "wsed/common.hpp"

namespace wsed {

struct AudioClip {
  std::vector<double> samples;  // mono, amplitudes nominally in [-1, 1]
  uint32_t sample_rate = 44100;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

// Log mel-band energy extraction parameters. Defaults give the canonical
// 40 ms / 50% overlap / 40-band setup (T = 500 for a 10 s 44.1 kHz clip).
struct FeatureConfig {
  double window_ms = 40.0;
  double overlap_fraction = 0.5;
  size_t num_mel_bands = 40;
  double fmin_hz = 0.0;
  double fmax_hz = 22050.0;
  size_t fft_size = 0;  // 0 = smallest power of two >= window length
  double log_floor = 1e-10;

  void validate() const;
  size_t window_samples(uint32_t sample_rate) const;
  size_t hop_samples(uint32_t sample_rate) const;
  size_t effective_fft_size(uint32_t sample_rate) const;
};

struct FeatureMatrix {
  size_t frames = 0;  // T
  size_t bands = 0;   // F
  std::vector<double> values;  // row-major T x F
  double frame_hop_s = 0.0;

  double at(size_t t, size_t b) const { return values[t * bands + b]; }
  double& at(size_t t, size_t b) { return values[t * bands + b]; }
};

// w[k] = 0.54 - 0.46 cos(2 pi k / (n-1)); n = 1 degenerates to [1.0].
std::vector<double> hamming_window(size_t n);

// Splits the clip into Hamming-windowed frames. The tail is zero-padded so
// T = ceil(len / hop) full-length frames come out.
std::vector<std::vector<double>> frame_signal(const AudioClip& clip,
                                              const FeatureConfig& cfg);

// |DFT|^2 of the (zero-padded) frame; returns fft_size/2 + 1 bins.
std::vector<double> power_spectrum(const std::vector<double>& frame,
                                   size_t fft_size);

// Triangular mel filterbank, peak value 1, HTK mel scale. Rows are filters,
// columns FFT bins (fft_size/2 + 1 of them).
std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg,
                                                uint32_t sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Full pipeline: frames -> power spectra -> mel energies -> natural log with
// floor. Output is T x num_mel_bands.
FeatureMatrix extract_mbe(const AudioClip& clip, const FeatureConfig& cfg);

}  // namespace wsed

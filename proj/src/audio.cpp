#include "wsed/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace wsed {

void FeatureConfig::validate() const {
  if (window_ms <= 0) throw UsageError("feature config: window_ms must be > 0");
  if (overlap_fraction <= 0.0 || overlap_fraction >= 1.0)
    throw UsageError("feature config: overlap_fraction must be in (0, 1)");
  if (num_mel_bands < 1)
    throw UsageError("feature config: num_mel_bands must be >= 1");
  if (fmin_hz >= fmax_hz) throw UsageError("feature config: fmin must be < fmax");
  if (log_floor <= 0) throw UsageError("feature config: log_floor must be > 0");
}

size_t FeatureConfig::window_samples(uint32_t sample_rate) const {
  return static_cast<size_t>(std::lround(window_ms * 1e-3 * sample_rate));
}

size_t FeatureConfig::hop_samples(uint32_t sample_rate) const {
  size_t win = window_samples(sample_rate);
  size_t hop = static_cast<size_t>(
      std::lround(static_cast<double>(win) * (1.0 - overlap_fraction)));
  return std::max<size_t>(hop, 1);
}

size_t FeatureConfig::effective_fft_size(uint32_t sample_rate) const {
  if (fft_size != 0) return fft_size;
  size_t win = window_samples(sample_rate);
  size_t n = 1;
  while (n < win) n <<= 1;
  return n;
}

std::vector<double> hamming_window(size_t n) {
  if (n == 0) throw UsageError("hamming_window: length must be >= 1");
  std::vector<double> w(n, 1.0);
  if (n == 1) return w;
  for (size_t k = 0; k < n; ++k)
    w[k] = 0.54 - 0.46 * std::cos(2.0 * M_PI * k / (n - 1));
  return w;
}

std::vector<std::vector<double>> frame_signal(const AudioClip& clip,
                                              const FeatureConfig& cfg) {
  cfg.validate();
  if (clip.samples.empty()) throw DataError("frame_signal: empty clip");
  if (clip.sample_rate == 0) throw DataError("frame_signal: sample_rate is 0");

  const size_t win = cfg.window_samples(clip.sample_rate);
  const size_t hop = cfg.hop_samples(clip.sample_rate);
  const size_t n = clip.samples.size();
  const size_t frames = (n + hop - 1) / hop;  // ceil(n / hop)
  const std::vector<double> window = hamming_window(win);

  std::vector<std::vector<double>> out(frames);
  for (size_t t = 0; t < frames; ++t) {
    std::vector<double>& f = out[t];
    f.assign(win, 0.0);
    const size_t start = t * hop;
    const size_t avail = start < n ? std::min(win, n - start) : 0;
    for (size_t k = 0; k < avail; ++k)
      f[k] = clip.samples[start + k] * window[k];
  }
  return out;
}

namespace {

// Iterative radix-2 Cooley-Tukey; n must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (n & (n - 1))
    throw UsageError("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

}  // namespace

std::vector<double> power_spectrum(const std::vector<double>& frame,
                                   size_t fft_size) {
  if (frame.size() > fft_size)
    throw UsageError("power_spectrum: frame longer than fft_size");
  std::vector<std::complex<double>> buf(fft_size, {0.0, 0.0});
  for (size_t i = 0; i < frame.size(); ++i) buf[i] = {frame[i], 0.0};
  fft_inplace(buf);
  std::vector<double> power(fft_size / 2 + 1);
  for (size_t j = 0; j <= fft_size / 2; ++j) power[j] = std::norm(buf[j]);
  return power;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

std::vector<std::vector<double>> mel_filterbank(const FeatureConfig& cfg,
                                                uint32_t sample_rate) {
  cfg.validate();
  const double nyquist = sample_rate / 2.0;
  if (cfg.fmax_hz > nyquist + 1e-9)
    throw UsageError("mel_filterbank: fmax exceeds Nyquist frequency");

  const size_t nfft = cfg.effective_fft_size(sample_rate);
  const size_t bins = nfft / 2 + 1;
  const size_t bands = cfg.num_mel_bands;

  // bands + 2 edges equally spaced on the mel scale
  std::vector<double> edges(bands + 2);
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_hz);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (bands + 1));

  std::vector<std::vector<double>> fb(bands, std::vector<double>(bins, 0.0));
  for (size_t m = 0; m < bands; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (size_t j = 0; j < bins; ++j) {
      const double f = static_cast<double>(j) * sample_rate / nfft;
      double w = 0.0;
      if (f > left && f < center)
        w = (f - left) / (center - left);
      else if (f >= center && f < right)
        w = (right - f) / (right - center);
      else if (f == center)
        w = 1.0;
      fb[m][j] = w;
    }
  }
  return fb;
}

FeatureMatrix extract_mbe(const AudioClip& clip, const FeatureConfig& cfg) {
  for (double s : clip.samples)
    if (!std::isfinite(s)) throw DataError("extract_mbe: non-finite sample");

  const auto frames = frame_signal(clip, cfg);
  const size_t nfft = cfg.effective_fft_size(clip.sample_rate);
  const auto fb = mel_filterbank(cfg, clip.sample_rate);

  FeatureMatrix out;
  out.frames = frames.size();
  out.bands = cfg.num_mel_bands;
  out.values.assign(out.frames * out.bands, 0.0);
  out.frame_hop_s =
      static_cast<double>(cfg.hop_samples(clip.sample_rate)) / clip.sample_rate;

  for (size_t t = 0; t < frames.size(); ++t) {
    const std::vector<double> power = power_spectrum(frames[t], nfft);
    for (size_t m = 0; m < out.bands; ++m) {
      double e = 0.0;
      const std::vector<double>& row = fb[m];
      for (size_t j = 0; j < power.size(); ++j) e += row[j] * power[j];
      out.at(t, m) = std::log(std::max(e, cfg.log_floor));
    }
  }
  return out;
}

}  // namespace wsed

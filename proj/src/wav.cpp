#include "wsed/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace wsed {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

}  // namespace

AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open wav file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw DataError("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  size_t data_off = 0, data_len = 0;
  bool have_fmt = false;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    uint32_t sz = read_u32(bytes.data() + pos + 4);
    size_t body = pos + 8;
    if (body + sz > bytes.size()) sz = static_cast<uint32_t>(bytes.size() - body);
    if (std::memcmp(id, "fmt ", 4) == 0 && sz >= 16) {
      format = read_u16(bytes.data() + body);
      channels = read_u16(bytes.data() + body + 2);
      sample_rate = read_u32(bytes.data() + body + 4);
      bits = read_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      data_off = body;
      data_len = sz;
    }
    pos = body + sz + (sz & 1);  // chunks are word-aligned
  }

  if (!have_fmt || data_off == 0)
    throw DataError("wav missing fmt or data chunk: " + path);
  if (channels != 1)
    throw DataError("wav is not mono (" + std::to_string(channels) +
                    " channels): " + path);
  if (sample_rate == 0) throw DataError("wav has zero sample rate: " + path);

  AudioClip clip;
  clip.sample_rate = sample_rate;
  if (format == 1 && bits == 16) {
    size_t n = data_len / 2;
    clip.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      int16_t s = static_cast<int16_t>(read_u16(bytes.data() + data_off + 2 * i));
      clip.samples[i] = std::clamp(s / 32767.0, -1.0, 1.0);
    }
  } else if (format == 3 && bits == 32) {
    size_t n = data_len / 4;
    clip.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t raw = read_u32(bytes.data() + data_off + 4 * i);
      float f;
      std::memcpy(&f, &raw, 4);
      clip.samples[i] = f;
    }
  } else {
    throw DataError("unsupported wav encoding (format " +
                    std::to_string(format) + ", " + std::to_string(bits) +
                    " bit): " + path);
  }
  for (double s : clip.samples)
    if (!std::isfinite(s)) throw DataError("wav contains non-finite sample: " + path);
  return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
  const uint32_t n = static_cast<uint32_t>(clip.samples.size());
  const uint32_t data_bytes = n * 2;

  std::vector<uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, clip.sample_rate);
  put_u32(out, clip.sample_rate * 2);  // byte rate
  put_u16(out, 2);                     // block align
  put_u16(out, 16);                    // bits
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (uint32_t i = 0; i < n; ++i) {
    double x = std::clamp(clip.samples[i], -1.0, 1.0);
    int v = static_cast<int>(std::lround(x * 32767.0));
    put_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write wav file: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write on wav file: " + path);
}

}  // namespace wsed

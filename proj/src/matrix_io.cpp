#include "wsed/matrix_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace wsed {

namespace {

constexpr char kMagic[6] = {'W', 'S', 'E', 'D', 'F', '1'};

void write_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v & 0xff),
                  static_cast<uint8_t>((v >> 8) & 0xff),
                  static_cast<uint8_t>((v >> 16) & 0xff),
                  static_cast<uint8_t>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::ifstream& f) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_matrix(const std::string& path, size_t rows, size_t cols,
                  const std::vector<double>& values) {
  if (values.size() != rows * cols)
    throw ShapeError("write_matrix: value count does not match rows*cols");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write matrix file: " + path);
  f.write(kMagic, 6);
  write_u32(f, static_cast<uint32_t>(rows));
  write_u32(f, static_cast<uint32_t>(cols));
  for (double v : values) {
    float x = static_cast<float>(v);
    uint32_t raw;
    std::memcpy(&raw, &x, 4);
    write_u32(f, raw);
  }
  if (!f) throw DataError("short write on matrix file: " + path);
}

MatrixFile read_matrix(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open matrix file: " + path);
  char magic[6];
  f.read(magic, 6);
  if (!f || std::memcmp(magic, kMagic, 6) != 0)
    throw DataError("bad magic in matrix file: " + path);
  MatrixFile m;
  m.rows = read_u32(f);
  m.cols = read_u32(f);
  m.values.resize(m.rows * m.cols);
  for (size_t i = 0; i < m.values.size(); ++i) {
    uint32_t raw = read_u32(f);
    float x;
    std::memcpy(&x, &raw, 4);
    m.values[i] = x;
  }
  if (!f) throw DataError("truncated matrix file: " + path);
  return m;
}

void write_matrix_csv(const std::string& path, size_t rows, size_t cols,
                      const std::vector<double>& values) {
  if (values.size() != rows * cols)
    throw ShapeError("write_matrix_csv: value count does not match rows*cols");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write csv file: " + path);
  char buf[32];
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.9g", values[r * cols + c]);
      f << buf << (c + 1 < cols ? "," : "");
    }
    f << "\n";
  }
}

void write_pgm(const std::string& path, size_t rows, size_t cols,
               const std::vector<double>& values) {
  if (values.size() != rows * cols)
    throw ShapeError("write_pgm: value count does not match rows*cols");
  double lo = INFINITY, hi = -INFINITY;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write pgm file: " + path);
  f << "P5\n" << cols << " " << rows << "\n255\n";
  for (double v : values) {
    int g = static_cast<int>(std::lround((v - lo) / span * 255.0));
    f.put(static_cast<char>(std::clamp(g, 0, 255)));
  }
}

}  // namespace wsed

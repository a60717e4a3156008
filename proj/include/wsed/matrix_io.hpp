#pragma once

#include <string>
#include <vector>

#include "wsed/common.hpp"

namespace wsed {

// "WSEDF1" binary matrix file: 6-byte magic, u32 rows, u32 cols (little
// endian), then rows*cols little-endian f32 values, row-major.
struct MatrixFile {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> values;  // stored as f32 on disk

  double at(size_t r, size_t c) const { return values[r * cols + c]; }
};

void write_matrix(const std::string& path, size_t rows, size_t cols,
                  const std::vector<double>& values);
MatrixFile read_matrix(const std::string& path);

// CSV alternative for the same payload, one row per line.
void write_matrix_csv(const std::string& path, size_t rows, size_t cols,
                      const std::vector<double>& values);

// 8-bit grayscale PGM render, min..max mapped to 0..255.
void write_pgm(const std::string& path, size_t rows, size_t cols,
               const std::vector<double>& values);

}  // namespace wsed

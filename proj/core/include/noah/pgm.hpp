#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace noah {

// Binary PGM (P5), maxval 255, rows top to bottom.
void write_pgm(const std::string& path, int width, int height,
               std::span<const std::uint8_t> pixels);

struct PgmImage {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::vector<std::uint8_t> pixels;
};
PgmImage read_pgm(const std::string& path);

// Min-max normalization to [0,1], then rounding to 8 bits. A constant input
// maps to all zeros.
std::vector<std::uint8_t> quantize_unit_range(std::span<const float> values);

// Symmetric normalization for signed maps: divide by max|v| (so zero stays at
// mid-gray), shift [-1,1] to [0,1], round to 8 bits.
std::vector<std::uint8_t> quantize_symmetric_range(std::span<const float> values);

}  // namespace noah

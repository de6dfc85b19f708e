#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noah/tensor.hpp"

namespace noah {

struct LabeledBatch {
  Tensor images;            // [count, H, W, 1], values in [0, 1]
  std::vector<int> labels;  // one per image
};

// Synthetic task: one glyph stamped into one quadrant of a square image.
// Label = glyph_index * 4 + quadrant_index, so glyph count K yields 4*K
// classes. Quadrant indices run row-major over the 2x2 quadrant grid.
// Built to separate heads that keep spatial structure from ones that average
// it away: glyph identity is recoverable from global pixel statistics, the
// quadrant is not.
struct QuadrantSpec {
  int image_size = 28;   // even, so quadrants are exact halves
  int glyphs = 2;        // filled square, hollow square
  float noise = 0.05f;   // amplitude of additive uniform noise, clipped to [0,1]
  int jitter = 2;        // glyph position jitter in pixels, per axis
  std::uint64_t seed = 0;
};

int quadrant_classes(const QuadrantSpec& spec);  // 4 * glyphs

// Generates `count` samples, cycling through the classes round-robin so any
// count divisible by the class count is exactly balanced. Jitter and noise
// are drawn from a single stream seeded by spec.seed; identical specs produce
// bit-identical batches.
LabeledBatch gen_quadrant(const QuadrantSpec& spec, int count);

// Noise-free single sample [1,S,S,1] at an explicit jitter offset. Two calls
// with the same glyph and jitter but different quadrants return images that
// are exact translations of each other.
Tensor render_quadrant_sample(const QuadrantSpec& spec, int glyph, int quadrant,
                              int jitter_row, int jitter_col);

// Loads an images/labels pair in the classic big-endian IDX format (magic
// 0x00000803 for rank-3 u8 images, 0x00000801 for rank-1 u8 labels), scaling
// pixels by 1/255. Throws FormatError for bad magic or mismatched counts and
// IoError for missing or truncated files.
LabeledBatch load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace noah

#include "noah/data.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>

#include "noah/error.hpp"
#include "noah/rng.hpp"

namespace noah {

namespace {

constexpr int kGlyphSize = 8;
constexpr int kStencilCount = 2;

// Stencils are binary 8x8 masks: 0 = filled square, 1 = hollow square (ring of
// width 2). Both fit inside a quadrant with room for the jitter.
bool stencil_pixel(int glyph, int r, int c) {
  if (glyph == 0) return true;
  const int edge = std::min(std::min(r, c), std::min(kGlyphSize - 1 - r, kGlyphSize - 1 - c));
  return edge < 2;
}

void validate_spec(const QuadrantSpec& spec) {
  if (spec.glyphs < 1 || spec.glyphs > kStencilCount) {
    throw ConfigError("glyph count must be 1 or 2, got " + std::to_string(spec.glyphs));
  }
  if (spec.image_size % 2 != 0) {
    throw ConfigError("image size must be even so quadrants are exact, got " +
                      std::to_string(spec.image_size));
  }
  if (spec.jitter < 0) {
    throw ConfigError("jitter must be non-negative, got " + std::to_string(spec.jitter));
  }
  if (spec.noise < 0.0f) {
    throw ConfigError("noise amplitude must be non-negative, got " + std::to_string(spec.noise));
  }
  const int quadrant = spec.image_size / 2;
  if (quadrant < kGlyphSize + 2 * spec.jitter) {
    throw ConfigError("image size " + std::to_string(spec.image_size) +
                      " leaves no room for an " + std::to_string(kGlyphSize) +
                      "px glyph with jitter " + std::to_string(spec.jitter));
  }
}

// Top-left corner of the glyph for a given quadrant and jitter offset.
void glyph_origin(const QuadrantSpec& spec, int quadrant, int jitter_row, int jitter_col,
                  int* row, int* col) {
  const int half = spec.image_size / 2;
  const int base = (half - kGlyphSize) / 2;
  *row = (quadrant / 2) * half + base + jitter_row;
  *col = (quadrant % 2) * half + base + jitter_col;
}

void stamp_glyph(Tensor& images, int sample, const QuadrantSpec& spec, int glyph,
                 int quadrant, int jitter_row, int jitter_col) {
  int row0 = 0, col0 = 0;
  glyph_origin(spec, quadrant, jitter_row, jitter_col, &row0, &col0);
  for (int r = 0; r < kGlyphSize; ++r) {
    for (int c = 0; c < kGlyphSize; ++c) {
      if (stencil_pixel(glyph, r, c)) {
        images.at(sample, row0 + r, col0 + c, 0) = 1.0f;
      }
    }
  }
}

std::uint32_t read_u32_be(std::ifstream& in, const std::string& path, const char* what) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (in.gcount() != 4) {
    throw IoError("'" + path + "': truncated while reading " + std::string(what));
  }
  return (static_cast<std::uint32_t>(bytes[0]) << 24) |
         (static_cast<std::uint32_t>(bytes[1]) << 16) |
         (static_cast<std::uint32_t>(bytes[2]) << 8) | static_cast<std::uint32_t>(bytes[3]);
}

std::vector<std::uint8_t> read_payload(std::ifstream& in, std::size_t count,
                                       const std::string& path) {
  std::vector<std::uint8_t> bytes(count);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw IoError("'" + path + "': truncated payload, expected " + std::to_string(count) +
                  " bytes");
  }
  return bytes;
}

}  // namespace

int quadrant_classes(const QuadrantSpec& spec) {
  validate_spec(spec);
  return 4 * spec.glyphs;
}

LabeledBatch gen_quadrant(const QuadrantSpec& spec, int count) {
  validate_spec(spec);
  if (count < 1) throw ConfigError("sample count must be positive, got " + std::to_string(count));

  const int classes = 4 * spec.glyphs;
  LabeledBatch batch;
  batch.images = Tensor(count, spec.image_size, spec.image_size, 1);
  batch.labels.resize(count);

  Rng rng(spec.seed);
  const int jitter_span = 2 * spec.jitter + 1;
  for (int t = 0; t < count; ++t) {
    // Round-robin over classes keeps any multiple of the class count exactly
    // balanced.
    const int label = t % classes;
    const int glyph = label / 4;
    const int quadrant = label % 4;
    const int jitter_row = rng.below(jitter_span) - spec.jitter;
    const int jitter_col = rng.below(jitter_span) - spec.jitter;
    batch.labels[t] = label;
    stamp_glyph(batch.images, t, spec, glyph, quadrant, jitter_row, jitter_col);

    if (spec.noise > 0.0f) {
      for (int i = 0; i < spec.image_size; ++i) {
        for (int j = 0; j < spec.image_size; ++j) {
          float& v = batch.images.at(t, i, j, 0);
          v += rng.uniform_float(-spec.noise, spec.noise);
          v = std::clamp(v, 0.0f, 1.0f);
        }
      }
    }
  }
  return batch;
}

Tensor render_quadrant_sample(const QuadrantSpec& spec, int glyph, int quadrant,
                              int jitter_row, int jitter_col) {
  validate_spec(spec);
  if (glyph < 0 || glyph >= spec.glyphs) {
    throw ConfigError("glyph index " + std::to_string(glyph) + " out of range for " +
                      std::to_string(spec.glyphs) + " glyphs");
  }
  if (quadrant < 0 || quadrant > 3) {
    throw ConfigError("quadrant index must be 0..3, got " + std::to_string(quadrant));
  }
  if (std::abs(jitter_row) > spec.jitter || std::abs(jitter_col) > spec.jitter) {
    throw ConfigError("jitter offset exceeds the configured bound of " +
                      std::to_string(spec.jitter));
  }
  Tensor image(1, spec.image_size, spec.image_size, 1);
  stamp_glyph(image, 0, spec, glyph, quadrant, jitter_row, jitter_col);
  return image;
}

LabeledBatch load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream images_in(images_path, std::ios::binary);
  if (!images_in) throw IoError("cannot open images file '" + images_path + "'");
  std::ifstream labels_in(labels_path, std::ios::binary);
  if (!labels_in) throw IoError("cannot open labels file '" + labels_path + "'");

  // Headers are big-endian u32 fields.
  char magic_bytes[4];
  images_in.read(magic_bytes, 4);
  if (images_in.gcount() != 4) {
    throw FormatError("'" + images_path + "': too small to hold an IDX header");
  }
  const std::uint32_t images_magic =
      (static_cast<std::uint32_t>(static_cast<unsigned char>(magic_bytes[0])) << 24) |
      (static_cast<std::uint32_t>(static_cast<unsigned char>(magic_bytes[1])) << 16) |
      (static_cast<std::uint32_t>(static_cast<unsigned char>(magic_bytes[2])) << 8) |
      static_cast<std::uint32_t>(static_cast<unsigned char>(magic_bytes[3]));
  if (images_magic != 0x00000803u) {
    throw FormatError("'" + images_path + "': bad IDX magic (expected 0x00000803 for u8 images of rank 3)");
  }
  const std::uint32_t count = read_u32_be(images_in, images_path, "image count");
  const std::uint32_t rows = read_u32_be(images_in, images_path, "row count");
  const std::uint32_t cols = read_u32_be(images_in, images_path, "column count");
  if (count == 0 || rows == 0 || cols == 0) {
    throw FormatError("'" + images_path + "': empty image dimensions");
  }

  const std::uint32_t labels_magic = read_u32_be(labels_in, labels_path, "magic");
  if (labels_magic != 0x00000801u) {
    throw FormatError("'" + labels_path + "': bad IDX magic (expected 0x00000801 for u8 labels of rank 1)");
  }
  const std::uint32_t label_count = read_u32_be(labels_in, labels_path, "label count");
  if (label_count != count) {
    throw FormatError("images file holds " + std::to_string(count) + " items but labels file holds " +
                      std::to_string(label_count));
  }

  const std::size_t pixel_count = static_cast<std::size_t>(count) * rows * cols;
  const std::vector<std::uint8_t> pixels = read_payload(images_in, pixel_count, images_path);
  const std::vector<std::uint8_t> labels = read_payload(labels_in, count, labels_path);

  LabeledBatch batch;
  batch.images = Tensor(static_cast<int>(count), static_cast<int>(rows),
                        static_cast<int>(cols), 1);
  auto values = batch.images.values();
  for (std::size_t i = 0; i < pixel_count; ++i) {
    values[i] = static_cast<float>(pixels[i]) / 255.0f;
  }
  batch.labels.assign(labels.begin(), labels.end());
  return batch;
}

}  // namespace noah

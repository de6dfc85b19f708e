#include "noah/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "noah/error.hpp"

namespace noah {

void write_pgm(const std::string& path, int width, int height,
               std::span<const std::uint8_t> pixels) {
  if (width < 1 || height < 1) {
    throw ShapeError("pgm: image extents must be positive, got " + std::to_string(width) + "x" +
                     std::to_string(height));
  }
  if (pixels.size() != static_cast<std::size_t>(width) * height) {
    throw ShapeError("pgm: " + std::to_string(pixels.size()) + " pixels for a " +
                     std::to_string(width) + "x" + std::to_string(height) + " image");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("failed while writing '" + path + "'");
}

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines as the
// netpbm header grammar allows.
std::string next_token(std::istream& in) {
  std::string token;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    token.push_back(static_cast<char>(c));
    c = in.get();
  }
  return token;
}

int parse_header_int(const std::string& token, const char* field) {
  try {
    std::size_t used = 0;
    const int value = std::stoi(token, &used);
    if (used != token.size() || value < 1) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw FormatError(std::string("pgm: bad ") + field + " '" + token + "'");
  }
}

}  // namespace

PgmImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  if (next_token(in) != "P5") throw FormatError("pgm: '" + path + "' is not a binary P5 file");

  PgmImage image;
  image.width = parse_header_int(next_token(in), "width");
  image.height = parse_header_int(next_token(in), "height");
  image.maxval = parse_header_int(next_token(in), "maxval");
  if (image.maxval > 255) {
    throw FormatError("pgm: maxval " + std::to_string(image.maxval) + " is not single-byte");
  }

  image.pixels.resize(static_cast<std::size_t>(image.width) * image.height);
  in.read(reinterpret_cast<char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) {
    throw IoError("pgm: '" + path + "' is truncated");
  }
  return image;
}

std::vector<std::uint8_t> quantize_unit_range(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size());
  if (values.empty()) return out;
  float lo = values[0];
  float hi = values[0];
  for (float v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) return out;  // constant input maps to all zeros
  const double scale = 255.0 / (static_cast<double>(hi) - lo);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double unit = (static_cast<double>(values[i]) - lo) * scale;
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(unit, 0.0, 255.0)));
  }
  return out;
}

std::vector<std::uint8_t> quantize_symmetric_range(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size(), 128);
  if (values.empty()) return out;
  float peak = 0.0f;
  for (float v : values) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0f)) return out;  // all-zero input maps to mid-gray
  const double scale = 127.5 / peak;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double shifted = 127.5 + static_cast<double>(values[i]) * scale;
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(shifted, 0.0, 255.0)));
  }
  return out;
}

}  // namespace noah

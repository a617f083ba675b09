#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scenegen.hpp"

namespace alignlab {

struct Rgb8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, RGB interleaved

  friend bool operator==(const Rgb8Image&, const Rgb8Image&) = default;
};

Rgb8Image quantize(const RgbImage& image);

// Binary P6 / P5 with maxval 255; headers are written exactly as
// "P6\n{w} {h}\n255\n" and "P5\n{w} {h}\n255\n".
std::string encode_ppm(const Rgb8Image& image);
std::string encode_pgm(const LabelMap& labels);
Rgb8Image decode_ppm(const std::string& bytes, const std::string& origin);
LabelMap decode_pgm(const std::string& bytes, const std::string& origin);

void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace alignlab

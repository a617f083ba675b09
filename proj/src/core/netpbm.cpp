#include "netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace alignlab {

namespace {

struct Header {
  int width = 0;
  int height = 0;
  std::size_t data_offset = 0;
};

Header parse_header(const std::string& bytes, const char* magic, const std::string& origin) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) {
    throw DataError("corrupt magic bytes in " + origin + " (expected " + magic + ")");
  }
  std::size_t pos = 2;
  auto next_int = [&](const char* field) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw DataError("truncated or malformed header in " + origin + " at " + field);
    }
    long value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + (bytes[pos++] - '0');
      if (value > 1 << 20) throw DataError("header value too large in " + origin);
    }
    return static_cast<int>(value);
  };
  Header h;
  h.width = next_int("width");
  h.height = next_int("height");
  const int maxval = next_int("maxval");
  if (maxval != 255) throw DataError("unsupported maxval " + std::to_string(maxval) + " in " + origin);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw DataError("truncated header in " + origin);
  }
  h.data_offset = pos + 1;
  if (h.width <= 0 || h.height <= 0) throw DataError("zero image size in " + origin);
  return h;
}

}  // namespace

Rgb8Image quantize(const RgbImage& image) {
  Rgb8Image out{image.width, image.height, std::vector<std::uint8_t>(image.pixels.size())};
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

std::string encode_ppm(const Rgb8Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

std::string encode_pgm(const LabelMap& labels) {
  std::string out = "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(labels.labels.data()), labels.labels.size());
  return out;
}

Rgb8Image decode_ppm(const std::string& bytes, const std::string& origin) {
  const Header h = parse_header(bytes, "P6", origin);
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
  if (bytes.size() - h.data_offset < n) throw DataError("truncated file " + origin);
  Rgb8Image img{h.width, h.height, {}};
  img.pixels.assign(bytes.begin() + static_cast<long>(h.data_offset),
                    bytes.begin() + static_cast<long>(h.data_offset + n));
  return img;
}

LabelMap decode_pgm(const std::string& bytes, const std::string& origin) {
  const Header h = parse_header(bytes, "P5", origin);
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() - h.data_offset < n) throw DataError("truncated file " + origin);
  LabelMap labels{h.width, h.height, {}};
  labels.labels.assign(bytes.begin() + static_cast<long>(h.data_offset),
                       bytes.begin() + static_cast<long>(h.data_offset + n));
  return labels;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("missing file: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace alignlab

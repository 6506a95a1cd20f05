#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "cafkit/error.hpp"
#include "cafkit/vision.hpp"

namespace cafkit {

namespace {

bool is_space(std::uint8_t b) { return b == ' ' || b == '\t' || b == '\n' || b == '\r' || b == '\v' || b == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  // Skips whitespace and '#' comments, then reads a positive decimal.
  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw FormatError(std::string("PNM ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("PNM: expected ") + what, pos_);
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  void single_space() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) {
      throw FormatError("PNM: expected whitespace before raster", pos_);
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

ImageTensor decode_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
    throw FormatError("not a binary PPM/PGM (expected P6 or P5 magic)", 0);
  }
  const bool rgb = bytes[1] == '6';
  HeaderReader in(bytes);
  in.advance(2);
  const std::size_t width = in.number("width");
  const std::size_t height = in.number("height");
  const std::size_t maxval_pos = in.pos();
  const std::size_t maxval = in.number("maxval");
  if (width == 0 || height == 0) throw FormatError("PNM: zero image dimension", maxval_pos);
  if (maxval == 0 || maxval > 65535) throw FormatError("PNM: maxval out of range", maxval_pos);
  in.single_space();

  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t channels_in = rgb ? 3 : 1;
  const std::size_t raster = width * height * channels_in * sample_bytes;
  const std::size_t start = in.pos();
  if (bytes.size() - start < raster) {
    throw FormatError("PNM: raster truncated (" + std::to_string(bytes.size() - start) + " of " +
                          std::to_string(raster) + " bytes)",
                      bytes.size());
  }

  ImageTensor img(height, width, 3);
  const double inv = 1.0 / static_cast<double>(maxval);
  std::size_t p = start;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < channels_in; ++c) {
        std::size_t v = bytes[p];
        if (sample_bytes == 2) v = (v << 8) | bytes[p + 1];
        if (v > maxval) throw FormatError("PNM: sample exceeds maxval", p);
        p += sample_bytes;
        const double f = static_cast<double>(v) * inv;
        if (rgb) {
          img(y, x, c) = f;
        } else {
          img(y, x, 0) = img(y, x, 1) = img(y, x, 2) = f;
        }
      }
    }
  }
  return img;
}

ImageTensor read_pnm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open image '" + path.string() + "'", 0);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_pnm(bytes);
}

std::vector<std::uint8_t> encode_ppm(const ImageTensor& img) {
  if (img.channels() != 3) throw ShapeError("encode_ppm: need 3 channels");
  const std::string header =
      "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.values().size());
  for (double v : img.values()) {
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  return out;
}

}  // namespace cafkit

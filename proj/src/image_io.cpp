#include "deml/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "deml/errors.hpp"

namespace deml {
namespace {

class HeaderParser {
 public:
  HeaderParser(const std::vector<unsigned char>& data, const std::filesystem::path& path)
      : data_(data), path_(path.string()) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path_ + ": " + what + " at byte " + std::to_string(pos_));
  }

  void skip_space_and_comments() {
    while (pos_ < data_.size()) {
      if (data_[pos_] == '#') {
        while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
      } else if (std::isspace(data_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < data_.size() && std::isdigit(data_[pos_])) {
      value = value * 10 + (data_[pos_] - '0');
      if (value > 1u << 24) fail(std::string("header ") + field + " too large");
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected header ") + field);
    return value;
  }

  std::string magic() {
    if (data_.size() < 2) fail("file too short for a magic number");
    pos_ = 2;
    return std::string(data_.begin(), data_.begin() + 2);
  }

  // Exactly one whitespace byte separates the header from the payload.
  void end_of_header() {
    if (pos_ >= data_.size() || !std::isspace(data_[pos_])) {
      fail("expected a single whitespace after maxval");
    }
    ++pos_;
  }

  std::size_t offset() const { return pos_; }

 private:
  const std::vector<unsigned char>& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

void write_bytes(const std::vector<unsigned char>& pixels, std::size_t height,
                 std::size_t width, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

std::pair<std::size_t, std::size_t> plane_dims(const Tensor& map) {
  if (map.ndim() == 2) return {map.dim(0), map.dim(1)};
  if (map.ndim() == 3 && map.dim(0) == 1) return {map.dim(1), map.dim(2)};
  throw DimensionError("write_pgm: expected [H x W] or [1 x H x W], got " +
                       shape_string(map.shape()));
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image: " + path.string());
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());

  HeaderParser header(data, path);
  const std::string magic = header.magic();
  if (magic != "P5" && magic != "P6") {
    throw FormatError(path.string() + ": unsupported magic '" + magic +
                      "' at byte 0 (expected P5 or P6)");
  }
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t width = header.number("width");
  const std::size_t height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (width == 0 || height == 0) header.fail("zero image dimension");
  if (maxval == 0 || maxval > 255) header.fail("maxval must be in [1, 255]");
  header.end_of_header();

  const std::size_t expected = width * height * channels;
  const std::size_t available = data.size() - header.offset();
  if (available < expected) {
    throw FormatError(path.string() + ": truncated payload at byte " +
                      std::to_string(header.offset()) + ": expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(available));
  }

  std::vector<double> pixels(width * height);
  const unsigned char* p = data.data() + header.offset();
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) acc += p[i * channels + c];
    pixels[i] = std::min(1.0, acc / static_cast<double>(channels) * scale);
  }
  return Tensor({1, height, width}, std::move(pixels));
}

void write_pgm(std::span<const double> plane, std::size_t height, std::size_t width,
               const std::filesystem::path& path) {
  if (plane.size() != height * width) {
    throw DimensionError("write_pgm: plane size does not match " + std::to_string(height) +
                         "x" + std::to_string(width));
  }
  const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
  const double range = *hi - *lo;
  std::vector<unsigned char> pixels(plane.size(), 0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < plane.size(); ++i) {
      pixels[i] = static_cast<unsigned char>(std::lround((plane[i] - *lo) / range * 255.0));
    }
  }
  write_bytes(pixels, height, width, path);
}

void write_pgm(const Tensor& map, const std::filesystem::path& path) {
  const auto [h, w] = plane_dims(map);
  write_pgm(map.values(), h, w, path);
}

void write_pgm_unit(const Tensor& image, const std::filesystem::path& path) {
  const auto [h, w] = plane_dims(image);
  std::vector<unsigned char> pixels(h * w);
  auto v = image.values();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<unsigned char>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
  }
  write_bytes(pixels, h, w, path);
}

}  // namespace deml

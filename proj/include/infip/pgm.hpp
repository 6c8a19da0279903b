#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "infip/error.hpp"
#include "infip/tensor.hpp"

namespace infip {

/// 8-bit single-channel image, row-major.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// Binary P5, maxval 255, no comments.
inline std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline GrayImage decode_pgm(std::string_view bytes, const std::string& name = "<memory>") {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> FormatError { return FormatError(name + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t start = pos, value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (value > (1u << 24)) throw fail("header value out of range");
      ++pos;
    }
    if (pos == start) throw fail("malformed PGM header");
    return value;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("not a binary PGM (P5) file");
  pos = 2;
  GrayImage img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval) + " (expected 255)");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("malformed PGM header");
  ++pos;
  if (img.width == 0 || img.height == 0) throw fail("empty image");
  const std::size_t count = img.width * img.height;
  if (bytes.size() - pos < count) throw fail("truncated pixel data");
  img.pixels.assign(reinterpret_cast<const std::uint8_t*>(bytes.data() + pos),
                    reinterpret_cast<const std::uint8_t*>(bytes.data() + pos + count));
  return img;
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  return decode_pgm(read_file_bytes(path), path.string());
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  write_file_bytes(path, encode_pgm(img));
}

inline Tensor image_to_tensor(const GrayImage& img) {
  Tensor t({1, img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

// Quantizes a single-channel tensor with values in [0,1] to 8 bits.
inline GrayImage tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 1)
    throw ShapeError("tensor_to_image: expected 1xHxW, got " + shape_string(t.shape()));
  GrayImage img{t.dim(1), t.dim(2), std::vector<std::uint8_t>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::round(t[i] * 255.0), 0.0, 255.0));
  return img;
}

}  // namespace infip

namespace infip {

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

// Binary P6, maxval 255.
inline std::string encode_ppm(const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

}  // namespace infip

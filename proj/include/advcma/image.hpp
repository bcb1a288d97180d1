#pragma once

#include "advcma/linalg.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace advcma {

class ImageError : public std::runtime_error {
 public:
  explicit ImageError(const std::string& what) : std::runtime_error(what) {}
};

/// Channel-major (k × h × w) image with values nominally in [0, 1].
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Image() = default;
  Image(std::size_t k, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(k), height(h), width(w), values(k * h * w, fill) {}

  std::size_t size() const { return values.size(); }
  bool same_shape(const Image& other) const {
    return channels == other.channels && height == other.height && width == other.width;
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }
  std::span<const double> span() const { return values; }
  Vector as_vector() const;
  std::string shape_string() const;

  bool operator==(const Image&) const = default;
};

Image image_from_vector(const Vector& v, std::size_t k, std::size_t h, std::size_t w);

/// Throws ImageError when the value count does not match k·h·w.
void check_shape(const Image& image);

/// Rounds every value to the nearest multiple of 1/255 after clamping to [0,1].
void quantize_8bit(Image& image);
std::uint8_t to_byte(double value);

/// 8-bit grayscale (k=1) or RGB (k=3) PNG.
std::string encode_png(const Image& image);
Image decode_png(std::string_view bytes);
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// All-black image of the given shape, used for masked candidates.
Image black_like(const Image& image);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace advcma

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace catdet::data {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// 8-bit RGB raster, row-major, interleaved channels (the PPM layout).
class Image {
 public:
  Image() = default;
  Image(int height, int width, Rgb fill = {});

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  std::uint8_t& at(int y, int x, int c) { return pixels_[index(y, x) + c]; }
  std::uint8_t at(int y, int x, int c) const { return pixels_[index(y, x) + c]; }

  Rgb pixel(int y, int x) const {
    const auto i = index(y, x);
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }
  void set_pixel(int y, int x, Rgb p) {
    const auto i = index(y, x);
    pixels_[i] = p.r;
    pixels_[i + 1] = p.g;
    pixels_[i + 2] = p.b;
  }

  const std::vector<std::uint8_t>& bytes() const { return pixels_; }
  std::vector<std::uint8_t>& bytes() { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int y, int x) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// Binary PPM (P6, maxval 255).
void write_ppm(const std::filesystem::path& path, const Image& img);
Image read_ppm(const std::filesystem::path& path);
std::string encode_ppm(const Image& img);

// 8-bit grayscale PGM (P5) from values in [0, 1], row-major.
void write_pgm(const std::filesystem::path& path, int height, int width,
               const std::vector<double>& values);

// Bilinear resampling with pixel-center alignment.
Image resize_bilinear(const Image& img, int height, int width);

}  // namespace catdet::data

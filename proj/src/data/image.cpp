#include "catdet/data/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "catdet/common/errors.hpp"

namespace catdet::data {

Image::Image(int height, int width, Rgb fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) throw InputError("image dimensions must be positive");
  pixels_.resize(static_cast<std::size_t>(height) * width * 3);
  for (std::size_t i = 0; i < pixels_.size(); i += 3) {
    pixels_[i] = fill.r;
    pixels_[i + 1] = fill.g;
    pixels_[i + 2] = fill.b;
  }
}

std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(img.bytes().data()), img.bytes().size());
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto blob = encode_ppm(img);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (next_token(in) != "P6") throw DataError(path.string() + ": not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw DataError(path.string() + ": unsupported PPM");
  Image img(h, w);
  in.read(reinterpret_cast<char*>(img.bytes().data()),
          static_cast<std::streamsize>(img.bytes().size()));
  if (in.gcount() != static_cast<std::streamsize>(img.bytes().size())) {
    throw DataError(path.string() + ": truncated PPM");
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, int height, int width,
               const std::vector<double>& values) {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw DimensionError("pgm size mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  for (double v : values) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(c * 255.0))));
  }
}

Image resize_bilinear(const Image& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img;
  Image out(height, width);
  const double sy = static_cast<double>(img.height()) / height;
  const double sx = static_cast<double>(img.width()) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                         wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace catdet::data

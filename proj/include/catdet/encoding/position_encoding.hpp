#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <tuple>

#include "catdet/numerics/tensor.hpp"

namespace catdet::enc {

inline constexpr double kDefaultTemperature = 10000.0;

// Fixed 2-D sinusoidal encoding of an H x W grid, one row per cell in
// row-major order. The first d_model/2 channels encode the row coordinate,
// the last d_model/2 the column; within each half channel 2i holds
// sin(p / T^(2i / (d_model/2))) and channel 2i+1 the matching cos. The
// coordinate p of index k along an axis of length n is 2*pi*k/n.
struct PositionEncoding {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t d_model = 0;
  double temperature = kDefaultTemperature;
  num::Tensor values;  // [(height*width) x d_model], no gradient
};

PositionEncoding sine_position_encoding(std::size_t height, std::size_t width, std::size_t d_model,
                                        double temperature = kDefaultTemperature);

// Row of grid cell (row, col) in a flattened sequence.
constexpr std::size_t grid_index(std::size_t row, std::size_t col, std::size_t width) {
  return row * width + col;
}

// Thread-safe memo keyed by (height, width, d_model).
class PositionEncodingCache {
 public:
  explicit PositionEncodingCache(double temperature = kDefaultTemperature)
      : temperature_(temperature) {}

  const PositionEncoding& get(std::size_t height, std::size_t width, std::size_t d_model);
  double temperature() const { return temperature_; }

 private:
  double temperature_;
  std::mutex mu_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, PositionEncoding> cache_;
};

}  // namespace catdet::enc

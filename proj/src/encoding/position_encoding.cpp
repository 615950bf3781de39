#include "catdet/encoding/position_encoding.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "catdet/common/errors.hpp"

namespace catdet::enc {

PositionEncoding sine_position_encoding(std::size_t height, std::size_t width, std::size_t d_model,
                                        double temperature) {
  if (d_model == 0 || d_model % 4 != 0) {
    throw ConfigError("position encoding needs d_model divisible by 4, got " + std::to_string(d_model));
  }
  if (height == 0 || width == 0) throw ConfigError("position encoding needs a non-empty grid");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");

  const std::size_t half = d_model / 2;
  std::vector<double> inv_freq(half / 2);
  for (std::size_t i = 0; i < inv_freq.size(); ++i) {
    inv_freq[i] = 1.0 / std::pow(temperature, 2.0 * static_cast<double>(i) / static_cast<double>(half));
  }
  auto coord = [](std::size_t k, std::size_t n) {
    return 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
  };

  std::vector<double> v(height * width * d_model);
  for (std::size_t r = 0; r < height; ++r) {
    const double pr = coord(r, height);
    for (std::size_t c = 0; c < width; ++c) {
      const double pc = coord(c, width);
      double* row = v.data() + grid_index(r, c, width) * d_model;
      for (std::size_t i = 0; i < inv_freq.size(); ++i) {
        row[2 * i] = std::sin(pr * inv_freq[i]);
        row[2 * i + 1] = std::cos(pr * inv_freq[i]);
        row[half + 2 * i] = std::sin(pc * inv_freq[i]);
        row[half + 2 * i + 1] = std::cos(pc * inv_freq[i]);
      }
    }
  }
  return {height, width, d_model, temperature, num::Tensor::from({height * width, d_model}, std::move(v))};
}

const PositionEncoding& PositionEncodingCache::get(std::size_t height, std::size_t width,
                                                   std::size_t d_model) {
  std::lock_guard lock(mu_);
  const auto key = std::make_tuple(height, width, d_model);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    it = cache_.emplace(key, sine_position_encoding(height, width, d_model, temperature_)).first;
  }
  return it->second;
}

}  // namespace catdet::enc

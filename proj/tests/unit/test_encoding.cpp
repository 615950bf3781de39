#include <doctest.h>

#include <cmath>
#include <numbers>

#include "catdet/common/errors.hpp"
#include "catdet/encoding/position_encoding.hpp"
#include "catdet/numerics/ops.hpp"

using namespace catdet;
using namespace catdet::enc;

TEST_CASE("coordinate zero gives sin 0 and cos 1") {
  auto pe = sine_position_encoding(5, 7, 16);
  REQUIRE(pe.values.shape() == num::Shape{35, 16});
  // Cell (0,0) has both coordinates zero.
  for (std::size_t ch = 0; ch < 16; ++ch) {
    CHECK(pe.values.at({0, ch}) == (ch % 2 == 0 ? 0.0 : 1.0));
  }
  // Row half of any row-0 cell is the zero coordinate too.
  for (std::size_t ch = 0; ch < 8; ++ch) {
    CHECK(pe.values.at({grid_index(0, 4, 7), ch}) == (ch % 2 == 0 ? 0.0 : 1.0));
  }
}

TEST_CASE("entries bounded for the paper grid") {
  auto pe = sine_position_encoding(13, 13, 256);
  for (double x : pe.values.data()) {
    CHECK(x >= -1.0);
    CHECK(x <= 1.0);
  }
}

TEST_CASE("rows are pairwise distinct on an 8x8 grid") {
  auto pe = sine_position_encoding(8, 8, 32);
  double min_d = 1e300;
  for (std::size_t a = 0; a < 64; ++a) {
    for (std::size_t b = a + 1; b < 64; ++b) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 32; ++c) {
        const double d = pe.values.at({a, c}) - pe.values.at({b, c});
        d2 += d * d;
      }
      min_d = std::min(min_d, std::sqrt(d2));
    }
  }
  CHECK(min_d > 0.0);
}

TEST_CASE("matches closed form and sin^2+cos^2 = 1") {
  const std::size_t h = 4, w = 6, d = 24;
  auto pe = sine_position_encoding(h, w, d, 100.0);
  const std::size_t half = d / 2;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t row = grid_index(r, c, w);
      for (std::size_t i = 0; i < half / 2; ++i) {
        const double f = std::pow(100.0, -2.0 * double(i) / double(half));
        const double pr = 2 * std::numbers::pi * double(r) / double(h) * f;
        const double pc = 2 * std::numbers::pi * double(c) / double(w) * f;
        CHECK(std::abs(pe.values.at({row, 2 * i}) - std::sin(pr)) <= 1e-12);
        CHECK(std::abs(pe.values.at({row, 2 * i + 1}) - std::cos(pr)) <= 1e-12);
        CHECK(std::abs(pe.values.at({row, half + 2 * i}) - std::sin(pc)) <= 1e-12);
        CHECK(std::abs(pe.values.at({row, half + 2 * i + 1}) - std::cos(pc)) <= 1e-12);
        const double s = pe.values.at({row, 2 * i}), co = pe.values.at({row, 2 * i + 1});
        CHECK(std::abs(s * s + co * co - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("d_model must be divisible by 4") {
  CHECK_THROWS_AS(sine_position_encoding(4, 4, 6), ConfigError);
  CHECK_THROWS_AS(sine_position_encoding(4, 4, 0), ConfigError);
  CHECK_NOTHROW(sine_position_encoding(4, 4, 8));
}

TEST_CASE("deterministic and cached") {
  auto a = sine_position_encoding(3, 5, 8);
  auto b = sine_position_encoding(3, 5, 8);
  CHECK(std::equal(a.values.data().begin(), a.values.data().end(), b.values.data().begin()));

  PositionEncodingCache cache;
  const auto& c1 = cache.get(3, 5, 8);
  const auto& c2 = cache.get(3, 5, 8);
  CHECK(&c1 == &c2);
  CHECK(std::equal(a.values.data().begin(), a.values.data().end(), c1.values.data().begin()));
  CHECK(&cache.get(5, 3, 8) != &c1);
}

TEST_CASE("grid order matches feature-map flattening") {
  // Feature channel 0 holds the row index, channel 1 the column index;
  // after flattening, sequence position k must be the cell grid_index maps to k.
  const std::size_t h = 3, w = 4;
  std::vector<double> v(2 * h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      v[0 * h * w + r * w + c] = double(r);
      v[1 * h * w + r * w + c] = double(c);
    }
  }
  auto seq = num::flatten_spatial(num::Tensor::from({2, h, w}, v));
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      CHECK(seq.at({grid_index(r, c, w), 0}) == double(r));
      CHECK(seq.at({grid_index(r, c, w), 1}) == double(c));
    }
  }
  auto back = num::unflatten_spatial(seq, h, w);
  CHECK(std::equal(back.data().begin(), back.data().end(), v.begin()));
}

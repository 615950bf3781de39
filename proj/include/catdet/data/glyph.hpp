#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "catdet/common/box.hpp"
#include "catdet/data/image.hpp"

namespace catdet::data {

inline constexpr int kNumGlyphFamilies = 16;

enum class GlyphFamily : int {
  kDisk = 0,
  kRing,
  kTriangle,
  kSquare,
  kDiamond,
  kPentagon,
  kHexagon,
  kStar5,
  kStar4,
  kPlus,
  kCrossX,
  kCrescent,
  kHalfDisk,
  kTee,
  kEll,
  kHollowSquare,
};

std::string_view family_name(GlyphFamily f);

// Occupancy test in the glyph's local frame, u and v in [-1, 1], v pointing down.
bool glyph_contains(GlyphFamily f, double u, double v);

// One placed glyph. size is the nominal extent in pixels before rotation,
// aspect stretches the horizontal axis relative to the vertical one.
struct GlyphInstance {
  GlyphFamily family = GlyphFamily::kDisk;
  double cx = 0.0;
  double cy = 0.0;
  double size = 48.0;
  double aspect = 1.0;
  double angle_rad = 0.0;
  Rgb color{255, 255, 255};
};

// Antialiased coverage raster of a glyph. alpha is row-major over the
// pixel window [x0, x0 + width) x [y0, y0 + height); every row and column
// of the window contains at least one nonzero alpha.
struct GlyphMask {
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;
  std::vector<double> alpha;

  Box box() const {
    return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + width),
            static_cast<double>(y0 + height)};
  }
  double at(int y, int x) const { return alpha[static_cast<std::size_t>(y) * width + x]; }
};

// Rasterizes with supersample x supersample subpixel samples.
GlyphMask rasterize(const GlyphInstance& g, int supersample = 3);

// Alpha-composites a mask in the glyph color. Pixels outside the image are dropped.
void composite(Image& img, const GlyphMask& mask, Rgb color);

Rgb hsv_to_rgb(double hue_deg, double sat, double val);

}  // namespace catdet::data

#include "catdet/data/glyph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "catdet/common/errors.hpp"

namespace catdet::data {
namespace {

constexpr double kPi = std::numbers::pi;

// Even-odd rule point-in-polygon.
bool in_polygon(const std::vector<std::array<double, 2>>& pts, double u, double v) {
  bool inside = false;
  for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
    const auto& a = pts[i];
    const auto& b = pts[j];
    if ((a[1] > v) != (b[1] > v)) {
      const double xint = (b[0] - a[0]) * (v - a[1]) / (b[1] - a[1]) + a[0];
      if (u < xint) inside = !inside;
    }
  }
  return inside;
}

std::vector<std::array<double, 2>> regular_polygon(int n, double radius) {
  std::vector<std::array<double, 2>> pts;
  for (int i = 0; i < n; ++i) {
    const double t = -kPi / 2 + 2 * kPi * i / n;
    pts.push_back({radius * std::cos(t), radius * std::sin(t)});
  }
  return pts;
}

std::vector<std::array<double, 2>> star(int points, double outer, double inner) {
  std::vector<std::array<double, 2>> pts;
  for (int i = 0; i < 2 * points; ++i) {
    const double r = (i % 2 == 0) ? outer : inner;
    const double t = -kPi / 2 + kPi * i / points;
    pts.push_back({r * std::cos(t), r * std::sin(t)});
  }
  return pts;
}

const auto& polygon_cache(GlyphFamily f) {
  static const auto tri = regular_polygon(3, 1.0);
  static const auto pent = regular_polygon(5, 1.0);
  static const auto hex = regular_polygon(6, 1.0);
  static const auto s5 = star(5, 1.0, 0.42);
  static const auto s4 = star(4, 1.0, 0.33);
  switch (f) {
    case GlyphFamily::kTriangle: return tri;
    case GlyphFamily::kPentagon: return pent;
    case GlyphFamily::kHexagon: return hex;
    case GlyphFamily::kStar5: return s5;
    default: return s4;
  }
}

bool plus_shape(double u, double v) {
  return (std::abs(u) < 0.3 && std::abs(v) < 0.95) || (std::abs(v) < 0.3 && std::abs(u) < 0.95);
}

}  // namespace

std::string_view family_name(GlyphFamily f) {
  static constexpr std::array<std::string_view, kNumGlyphFamilies> kNames = {
      "disk",    "ring",   "triangle", "square", "diamond",   "pentagon", "hexagon", "star5",
      "star4",   "plus",   "cross_x",  "crescent", "half_disk", "tee",    "ell",     "hollow_square"};
  return kNames.at(static_cast<std::size_t>(f));
}

bool glyph_contains(GlyphFamily f, double u, double v) {
  const double r2 = u * u + v * v;
  switch (f) {
    case GlyphFamily::kDisk: return r2 < 0.95 * 0.95;
    case GlyphFamily::kRing: return r2 < 0.95 * 0.95 && r2 > 0.55 * 0.55;
    case GlyphFamily::kSquare: return std::abs(u) < 0.8 && std::abs(v) < 0.8;
    case GlyphFamily::kDiamond: return std::abs(u) + std::abs(v) < 1.0;
    case GlyphFamily::kTriangle:
    case GlyphFamily::kPentagon:
    case GlyphFamily::kHexagon:
    case GlyphFamily::kStar5:
    case GlyphFamily::kStar4: return in_polygon(polygon_cache(f), u, v);
    case GlyphFamily::kPlus: return plus_shape(u, v);
    case GlyphFamily::kCrossX: {
      const double c = std::numbers::sqrt2 / 2;
      return plus_shape(c * (u + v), c * (v - u));
    }
    case GlyphFamily::kCrescent: {
      const double du = u - 0.45;
      return r2 < 0.95 * 0.95 && du * du + v * v > 0.72 * 0.72;
    }
    case GlyphFamily::kHalfDisk: return r2 < 0.95 * 0.95 && v > -0.1;
    case GlyphFamily::kTee:
      return (std::abs(v + 0.72) < 0.23 && std::abs(u) < 0.95) ||
             (std::abs(u) < 0.23 && v > -0.95 && v < 0.95);
    case GlyphFamily::kEll:
      return (std::abs(u + 0.7) < 0.25 && std::abs(v) < 0.95) ||
             (std::abs(v - 0.7) < 0.25 && std::abs(u) < 0.95);
    case GlyphFamily::kHollowSquare:
      return std::abs(u) < 0.85 && std::abs(v) < 0.85 && !(std::abs(u) < 0.5 && std::abs(v) < 0.5);
  }
  return false;
}

GlyphMask rasterize(const GlyphInstance& g, int supersample) {
  if (g.size <= 0.0 || g.aspect <= 0.0 || supersample < 1) {
    throw ContractError("glyph size, aspect and supersample must be positive");
  }
  const double half_h = 0.5 * g.size;
  const double half_w = 0.5 * g.size * g.aspect;
  const double reach = std::hypot(half_w, half_h) + 1.0;
  const int wx0 = static_cast<int>(std::floor(g.cx - reach));
  const int wy0 = static_cast<int>(std::floor(g.cy - reach));
  const int wn = static_cast<int>(std::ceil(2 * reach)) + 1;
  const double ca = std::cos(g.angle_rad);
  const double sa = std::sin(g.angle_rad);
  const double inv_samples = 1.0 / (supersample * supersample);

  std::vector<double> window(static_cast<std::size_t>(wn) * wn, 0.0);
  int min_x = wn, min_y = wn, max_x = -1, max_y = -1;
  for (int j = 0; j < wn; ++j) {
    for (int i = 0; i < wn; ++i) {
      int hits = 0;
      for (int sj = 0; sj < supersample; ++sj) {
        for (int si = 0; si < supersample; ++si) {
          const double px = wx0 + i + (si + 0.5) / supersample - g.cx;
          const double py = wy0 + j + (sj + 0.5) / supersample - g.cy;
          // inverse rotation into the glyph frame
          const double lx = ca * px + sa * py;
          const double ly = -sa * px + ca * py;
          if (glyph_contains(g.family, lx / half_w, ly / half_h)) ++hits;
        }
      }
      if (hits > 0) {
        window[static_cast<std::size_t>(j) * wn + i] = hits * inv_samples;
        min_x = std::min(min_x, i);
        max_x = std::max(max_x, i);
        min_y = std::min(min_y, j);
        max_y = std::max(max_y, j);
      }
    }
  }
  GlyphMask mask;
  if (max_x < 0) return mask;
  mask.x0 = wx0 + min_x;
  mask.y0 = wy0 + min_y;
  mask.width = max_x - min_x + 1;
  mask.height = max_y - min_y + 1;
  mask.alpha.resize(static_cast<std::size_t>(mask.width) * mask.height);
  for (int j = 0; j < mask.height; ++j) {
    for (int i = 0; i < mask.width; ++i) {
      mask.alpha[static_cast<std::size_t>(j) * mask.width + i] =
          window[static_cast<std::size_t>(j + min_y) * wn + (i + min_x)];
    }
  }
  return mask;
}

void composite(Image& img, const GlyphMask& mask, Rgb color) {
  const std::array<double, 3> c = {static_cast<double>(color.r), static_cast<double>(color.g),
                                   static_cast<double>(color.b)};
  for (int j = 0; j < mask.height; ++j) {
    const int y = mask.y0 + j;
    if (y < 0 || y >= img.height()) continue;
    for (int i = 0; i < mask.width; ++i) {
      const int x = mask.x0 + i;
      if (x < 0 || x >= img.width()) continue;
      const double a = mask.at(j, i);
      if (a <= 0.0) continue;
      for (int k = 0; k < 3; ++k) {
        const double v = (1.0 - a) * img.at(y, x, k) + a * c[k];
        img.at(y, x, k) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
}

Rgb hsv_to_rgb(double hue_deg, double sat, double val) {
  double h = std::fmod(hue_deg, 360.0);
  if (h < 0) h += 360.0;
  const double c = val * sat;
  const double hp = h / 60.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = val - c;
  auto to8 = [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
  };
  return {to8(r + m), to8(g + m), to8(b + m)};
}

}  // namespace catdet::data

#pragma once

#include <algorithm>
#include <array>
#include <vector>

namespace catdet {

// Axis-aligned box in pixel coordinates, (x1, y1) top-left and (x2, y2)
// bottom-right, exclusive of nothing: width is x2 - x1.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  std::array<double, 4> as_array() const { return {x1, y1, x2, y2}; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
          std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
}

inline bool inside_image(const Box& b, double width, double height) {
  return b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= width && b.y2 <= height;
}

// A scored detection. score is P(bbox) in [0, 1].
struct Detection {
  Box box;
  double score = 0.0;
};

}  // namespace catdet

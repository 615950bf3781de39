#include "catdet/detector/boxes.hpp"

#include <algorithm>
#include <numeric>

namespace catdet::det {

Deltas BoxCoder::encode(const Box& r, const Box& t) const {
  return {weights[0] * (t.center_x() - r.center_x()) / r.width(),
          weights[1] * (t.center_y() - r.center_y()) / r.height(),
          weights[2] * std::log(t.width() / r.width()), weights[3] * std::log(t.height() / r.height())};
}

Box BoxCoder::decode(const Box& r, const Deltas& d) const {
  const double cx = r.center_x() + d[0] / weights[0] * r.width();
  const double cy = r.center_y() + d[1] / weights[1] * r.height();
  const double w = r.width() * std::exp(std::min(d[2] / weights[2], max_log_scale));
  const double h = r.height() * std::exp(std::min(d[3] / weights[3], max_log_scale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<Box> make_anchors(std::size_t rows, std::size_t cols, std::size_t stride,
                              std::span<const double> sizes, double image_width, double image_height) {
  std::vector<Box> out;
  out.reserve(rows * cols * sizes.size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) * static_cast<double>(stride);
      const double cy = (static_cast<double>(i) + 0.5) * static_cast<double>(stride);
      for (double s : sizes) {
        out.push_back(clip_box({cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2}, image_width, image_height));
      }
    }
  }
  return out;
}

std::vector<double> iou_matrix(std::span<const Box> a, std::span<const Box> b) {
  std::vector<double> m(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) m[i * b.size() + j] = iou(a[i], b[j]);
  }
  return m;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> keep;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(keep.begin(), keep.end(),
                                        [&](const Detection& k) { return iou(k.box, d.box) > iou_threshold; });
    if (!suppressed) keep.push_back(d);
  }
  return keep;
}

}  // namespace catdet::det

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "catdet/common/box.hpp"

namespace catdet::det {

// (dx, dy, dw, dh): centre offsets relative to the reference size and log
// size ratios, each multiplied by its weight.
using Deltas = std::array<double, 4>;

struct BoxCoder {
  std::array<double, 4> weights{1.0, 1.0, 1.0, 1.0};
  double max_log_scale = std::log(1000.0 / 16.0);

  Deltas encode(const Box& reference, const Box& target) const;
  Box decode(const Box& reference, const Deltas& d) const;
};

// One anchor per size per cell, ordered (row, col, anchor), centred at
// ((col + 0.5) * stride, (row + 0.5) * stride) and clipped to the image.
std::vector<Box> make_anchors(std::size_t rows, std::size_t cols, std::size_t stride,
                              std::span<const double> sizes, double image_width, double image_height);

// IoU matrix, row-major [a.size() x b.size()].
std::vector<double> iou_matrix(std::span<const Box> a, std::span<const Box> b);

// Greedy NMS. Output sorted by descending score; equal scores keep input order.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

}  // namespace catdet::det

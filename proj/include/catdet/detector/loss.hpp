#pragma once

#include <span>
#include <vector>

#include "catdet/common/box.hpp"
#include "catdet/detector/boxes.hpp"
#include "catdet/numerics/tensor.hpp"

namespace catdet::det {

// 1 positive, 0 negative, -1 ignored. Positive: IoU >= pos_iou with some
// ground truth, or the best anchor of a ground-truth box. Negative: IoU < neg_iou.
std::vector<int> anchor_labels(std::span<const Box> anchors, std::span<const Box> gt, double pos_iou,
                               double neg_iou);

struct LossInputs {
  num::Tensor objectness;    // [A] logits over anchors
  std::vector<Box> anchors;  // A
  std::vector<Box> rois;     // R
  num::Tensor match_logits;  // [R]
  num::Tensor deltas;        // [R x 4], weighted by coder.weights
  std::vector<Box> gt;
  BoxCoder coder;
  double pos_iou = 0.5;
  double neg_iou = 0.3;
};

struct LossBreakdown {
  num::Tensor total;
  double objectness = 0.0;
  double match = 0.0;
  double regression = 0.0;
};

// objectness: mean BCE over positive anchors + mean BCE over negative anchors
// match: mean BCE over RoIs, label 1 when IoU >= pos_iou with a ground truth
// regression: smooth-L1 (beta 1) averaged over the 4 deltas of positive RoIs
// The three terms are summed with unit weights.
LossBreakdown detection_loss(const LossInputs& in);

}  // namespace catdet::det

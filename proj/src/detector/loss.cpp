#include "catdet/detector/loss.hpp"

#include "catdet/common/errors.hpp"
#include "catdet/numerics/ops.hpp"

namespace catdet::det {

std::vector<int> anchor_labels(std::span<const Box> anchors, std::span<const Box> gt, double pos_iou,
                               double neg_iou) {
  const std::size_t A = anchors.size(), G = gt.size();
  const auto m = iou_matrix(anchors, gt);
  std::vector<int> labels(A, -1);
  for (std::size_t a = 0; a < A; ++a) {
    double best = 0.0;
    for (std::size_t g = 0; g < G; ++g) best = std::max(best, m[a * G + g]);
    if (best < neg_iou) labels[a] = 0;
    if (best >= pos_iou) labels[a] = 1;
  }
  for (std::size_t g = 0; g < G; ++g) {
    std::size_t arg = 0;
    for (std::size_t a = 1; a < A; ++a) {
      if (m[a * G + g] > m[arg * G + g]) arg = a;
    }
    labels[arg] = 1;
  }
  return labels;
}

LossBreakdown detection_loss(const LossInputs& in) {
  if (in.gt.empty()) throw ContractError("detection_loss needs at least one ground-truth box");
  const std::size_t A = in.anchors.size(), R = in.rois.size(), G = in.gt.size();
  if (in.objectness.numel() != A || in.match_logits.numel() != R || in.deltas.numel() != 4 * R) {
    throw DimensionError("detection_loss: head outputs do not match anchor/RoI counts");
  }

  const auto labels = anchor_labels(in.anchors, in.gt, in.pos_iou, in.neg_iou);
  std::size_t npos = 0, nneg = 0;
  for (int l : labels) {
    npos += l == 1;
    nneg += l == 0;
  }
  std::vector<double> obj_t(A, 0.0), obj_w(A, 0.0);
  for (std::size_t a = 0; a < A; ++a) {
    if (labels[a] == 1) {
      obj_t[a] = 1.0;
      obj_w[a] = 1.0 / static_cast<double>(npos);
    } else if (labels[a] == 0) {
      obj_w[a] = 1.0 / static_cast<double>(nneg);
    }
  }
  auto l_obj = num::bce_with_logits(in.objectness, obj_t, obj_w);

  const auto m = iou_matrix(in.rois, in.gt);
  std::vector<double> match_t(R, 0.0), match_w(R, 1.0 / static_cast<double>(R));
  std::vector<double> reg_t(4 * R, 0.0), reg_w(4 * R, 0.0);
  std::vector<std::size_t> positives;
  for (std::size_t r = 0; r < R; ++r) {
    std::size_t arg = 0;
    for (std::size_t g = 1; g < G; ++g) {
      if (m[r * G + g] > m[r * G + arg]) arg = g;
    }
    if (m[r * G + arg] >= in.pos_iou) {
      match_t[r] = 1.0;
      positives.push_back(r);
      const auto d = in.coder.encode(in.rois[r], in.gt[arg]);
      for (int k = 0; k < 4; ++k) reg_t[4 * r + k] = d[k];
    }
  }
  for (std::size_t r : positives) {
    for (int k = 0; k < 4; ++k) reg_w[4 * r + k] = 1.0 / (4.0 * static_cast<double>(positives.size()));
  }
  auto l_match = num::bce_with_logits(in.match_logits, match_t, match_w);
  auto l_reg = num::smooth_l1(in.deltas, reg_t, reg_w, 1.0);

  LossBreakdown out;
  out.objectness = l_obj.item();
  out.match = l_match.item();
  out.regression = l_reg.item();
  out.total = num::add(num::add(l_obj, l_match), l_reg);
  return out;
}

}  // namespace catdet::det

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "catdet/common/box.hpp"
#include "catdet/numerics/params.hpp"
#include "catdet/numerics/spatial.hpp"

namespace catdet::det {

using num::SpatialFeature;
using num::Tensor;

// 1x1 objectness conv, one logit per anchor size.
struct ProposalHeadParams {
  Tensor w, b;  // [A x C x 1 x 1], [A]

  std::size_t anchors_per_cell() const { return w.dim(0); }

  static ProposalHeadParams init(num::Initializer& init, std::size_t channels, std::size_t anchors);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

// Logits flattened in (row, col, anchor) order: [H*W*A].
Tensor objectness_logits(const SpatialFeature& f_t, const ProposalHeadParams& p);

struct Proposal {
  Box box;
  double objectness = 0.0;
  std::size_t anchor_index = 0;
};

// Top-k anchors by objectness; ties broken by anchor index, i.e. (row, col, anchor).
// k larger than the anchor count returns every anchor and logs a warning.
std::vector<Proposal> generate_proposals(std::span<const double> objectness, std::span<const Box> anchors,
                                         std::size_t k);

// Bilinear samples at the s x s bin centres of each box, in feature
// coordinates box / stride - 0.5. Output [R x (C*s*s)], channel-major per row.
Tensor roi_pool(const SpatialFeature& feat, std::span<const Box> boxes, std::size_t s);

// Per-channel mean of pooled RoIs: [R x (C*s*s)] -> [R x C].
Tensor roi_gap(const Tensor& rois, std::size_t channels);

// MLP 2C -> C -> 1 on concat(GAP(roi), GAP(F_q)).
struct ClassifierParams {
  Tensor w1, b1, w2, b2;

  static ClassifierParams init(num::Initializer& init, std::size_t channels);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

// Match logits, one per pooled RoI: [R].
Tensor similarity_logits(const Tensor& rois, const SpatialFeature& f_q, const ClassifierParams& p);

// Match probability for a single pooled RoI [C x s x s].
double classify_similarity(const Tensor& roi_feat, const SpatialFeature& f_q, const ClassifierParams& p);

// MLP C*s*s -> C -> 4 producing weighted box deltas.
struct RegressorParams {
  Tensor w1, b1, w2, b2;

  static RegressorParams init(num::Initializer& init, std::size_t channels, std::size_t roi_size);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

// [R x (C*s*s)] -> [R x 4]
Tensor regress_deltas(const Tensor& rois, const RegressorParams& p);

}  // namespace catdet::det

#include "catdet/detector/heads.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>
#include <numeric>

#include "catdet/common/errors.hpp"
#include "catdet/numerics/ops.hpp"

namespace catdet::det {

ProposalHeadParams ProposalHeadParams::init(num::Initializer& init, std::size_t channels, std::size_t anchors) {
  return {init.uniform_fan_in({anchors, channels, 1, 1}, channels), init.uniform_fan_in({anchors}, channels)};
}

void ProposalHeadParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + "w", w);
  reg.add(prefix + "b", b);
}

Tensor objectness_logits(const SpatialFeature& f_t, const ProposalHeadParams& p) {
  auto maps = num::conv2d(f_t.data, p.w, p.b, 1, 0);  // [A x H x W]
  return num::reshape(num::flatten_spatial(maps), {maps.numel()});
}

std::vector<Proposal> generate_proposals(std::span<const double> objectness, std::span<const Box> anchors,
                                         std::size_t k) {
  if (k == 0) throw ContractError("proposal count must be at least 1");
  if (objectness.size() != anchors.size()) {
    throw DimensionError("generate_proposals: " + std::to_string(objectness.size()) + " scores for " +
                         std::to_string(anchors.size()) + " anchors");
  }
  if (k > anchors.size()) {
    std::cerr << "warning: requested " << k << " proposals but only " << anchors.size()
              << " anchors exist; returning all\n";
    k = anchors.size();
  }
  std::vector<std::size_t> idx(anchors.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return objectness[a] != objectness[b] ? objectness[a] > objectness[b] : a < b;
                    });
  std::vector<Proposal> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({anchors[idx[i]], objectness[idx[i]], idx[i]});
  return out;
}

namespace {

// Four taps of one bilinear sample, flattened cell indices and weights.
struct Tap {
  std::array<std::size_t, 4> cell{};
  std::array<double, 4> w{};
};

Tap bilinear_tap(double y, double x, std::size_t H, std::size_t W) {
  Tap t;
  if (y < -1.0 || y > static_cast<double>(H) || x < -1.0 || x > static_cast<double>(W)) return t;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  std::size_t y1, x1;
  if (y0 >= H - 1) {
    y0 = y1 = H - 1;
    y = static_cast<double>(y0);
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= W - 1) {
    x0 = x1 = W - 1;
    x = static_cast<double>(x0);
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - static_cast<double>(y0), lx = x - static_cast<double>(x0);
  t.cell = {y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1};
  t.w = {(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx};
  return t;
}

}  // namespace

Tensor roi_pool(const SpatialFeature& feat, std::span<const Box> boxes, std::size_t s) {
  if (boxes.empty()) throw ContractError("roi_pool needs at least one box");
  if (s == 0) throw ContractError("roi_pool output size must be positive");
  const auto C = feat.channels(), H = feat.height(), W = feat.width();
  const double stride = static_cast<double>(feat.stride);
  const double img_w = static_cast<double>(W) * stride, img_h = static_cast<double>(H) * stride;
  const std::size_t R = boxes.size(), S2 = s * s, HW = H * W;

  auto taps = std::make_shared<std::vector<Tap>>(R * S2);
  for (std::size_t r = 0; r < R; ++r) {
    const Box b = clip_box(boxes[r], img_w, img_h);
    if (!b.valid()) throw ContractError("roi_pool: degenerate box");
    const double x0 = b.x1 / stride - 0.5, y0 = b.y1 / stride - 0.5;
    const double bw = b.width() / stride / static_cast<double>(s);
    const double bh = b.height() / stride / static_cast<double>(s);
    for (std::size_t by = 0; by < s; ++by) {
      for (std::size_t bx = 0; bx < s; ++bx) {
        (*taps)[r * S2 + by * s + bx] = bilinear_tap(y0 + (static_cast<double>(by) + 0.5) * bh,
                                                     x0 + (static_cast<double>(bx) + 0.5) * bw, H, W);
      }
    }
  }

  const auto& in = feat.data.node().value;
  std::vector<double> out(R * C * S2);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* src = in.data() + c * HW;
      double* dst = out.data() + (r * C + c) * S2;
      for (std::size_t q = 0; q < S2; ++q) {
        const Tap& t = (*taps)[r * S2 + q];
        dst[q] = t.w[0] * src[t.cell[0]] + t.w[1] * src[t.cell[1]] + t.w[2] * src[t.cell[2]] +
                 t.w[3] * src[t.cell[3]];
      }
    }
  }
  return Tensor::make_result(
      {R, C * S2}, std::move(out), {feat.data},
      [=](num::detail::Node& self) {
        auto& g = self.parents[0]->grad;
        for (std::size_t r = 0; r < R; ++r) {
          for (std::size_t c = 0; c < C; ++c) {
            double* dst = g.data() + c * HW;
            const double* src = self.grad.data() + (r * C + c) * S2;
            for (std::size_t q = 0; q < S2; ++q) {
              const Tap& t = (*taps)[r * S2 + q];
              for (int i = 0; i < 4; ++i) dst[t.cell[i]] += t.w[i] * src[q];
            }
          }
        }
      },
      "roi_pool");
}

Tensor roi_gap(const Tensor& rois, std::size_t channels) {
  const std::size_t R = rois.dim(0);
  const std::size_t S2 = rois.dim(1) / channels;
  return num::reshape(num::row_mean(rois, S2), {R, channels});
}

ClassifierParams ClassifierParams::init(num::Initializer& init, std::size_t C) {
  return {init.uniform_fan_in({2 * C, C}, 2 * C), init.uniform_fan_in({C}, 2 * C), init.uniform_fan_in({C, 1}, C),
          init.uniform_fan_in({1}, C)};
}

void ClassifierParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + "w1", w1);
  reg.add(prefix + "b1", b1);
  reg.add(prefix + "w2", w2);
  reg.add(prefix + "b2", b2);
}

Tensor similarity_logits(const Tensor& rois, const SpatialFeature& f_q, const ClassifierParams& p) {
  const std::size_t C = f_q.channels();
  if (2 * C != p.w1.dim(0) || rois.dim(1) % C != 0) {
    throw DimensionError("classifier: query has " + std::to_string(C) + " channels, RoIs " +
                         num::shape_str(rois.shape()) + ", head expects " + std::to_string(p.w1.dim(0) / 2));
  }
  const Tensor parts[] = {roi_gap(rois, C), num::repeat_rows(num::global_avg_pool(f_q.data), rois.dim(0))};
  auto hidden = num::relu(num::linear(num::concat_cols(parts), p.w1, p.b1));
  return num::reshape(num::linear(hidden, p.w2, p.b2), {rois.dim(0)});
}

double classify_similarity(const Tensor& roi_feat, const SpatialFeature& f_q, const ClassifierParams& p) {
  if (roi_feat.rank() != 3 || roi_feat.dim(0) != f_q.channels()) {
    throw DimensionError("classify_similarity: RoI " + num::shape_str(roi_feat.shape()) + " vs query with " +
                         std::to_string(f_q.channels()) + " channels");
  }
  auto row = num::reshape(roi_feat, {1, roi_feat.numel()});
  return num::sigmoid(similarity_logits(row, f_q, p)).item();
}

RegressorParams RegressorParams::init(num::Initializer& init, std::size_t C, std::size_t s) {
  const std::size_t in = C * s * s;
  return {init.uniform_fan_in({in, C}, in), init.uniform_fan_in({C}, in), init.uniform_fan_in({C, 4}, C),
          init.uniform_fan_in({4}, C)};
}

void RegressorParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + "w1", w1);
  reg.add(prefix + "b1", b1);
  reg.add(prefix + "w2", w2);
  reg.add(prefix + "b2", b2);
}

Tensor regress_deltas(const Tensor& rois, const RegressorParams& p) {
  if (rois.dim(1) != p.w1.dim(0)) {
    throw DimensionError("regressor: RoIs " + num::shape_str(rois.shape()) + " vs input width " +
                         std::to_string(p.w1.dim(0)));
  }
  return num::linear(num::relu(num::linear(rois, p.w1, p.b1)), p.w2, p.b2);
}

}  // namespace catdet::det

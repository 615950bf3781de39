#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "catdet/data/image.hpp"
#include "catdet/numerics/params.hpp"
#include "catdet/numerics/spatial.hpp"

namespace catdet::det {

using num::SpatialFeature;
using num::Tensor;

struct ConvLayer {
  Tensor w, b;  // [out x in x k x k], [out]
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// Five ReLU convolutions with total stride 16; shared by target and query.
//   3->16 k4 s4, 16->32 k3 p1, 32->32 k2 s2, 32->64 k3 p1, 64->64 k2 s2
struct BackboneParams {
  std::vector<ConvLayer> layers;

  static constexpr std::size_t kStride = 16;
  static constexpr std::size_t kMinSide = 32;

  std::size_t out_channels() const { return layers.back().w.dim(0); }

  static BackboneParams init(num::Initializer& init);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

// image [3 x H x W] -> [C_b x floor(H/16) x floor(W/16)]
SpatialFeature backbone_forward(const Tensor& image, const BackboneParams& p);

// HWC bytes -> normalized CHW tensor, (v/255 - 0.45) / 0.25.
Tensor image_tensor(const data::Image& img);

}  // namespace catdet::det

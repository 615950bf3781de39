#include "catdet/detector/backbone.hpp"

#include "catdet/common/errors.hpp"
#include "catdet/numerics/ops.hpp"

namespace catdet::det {

BackboneParams BackboneParams::init(num::Initializer& init) {
  struct Spec {
    std::size_t in, out, k, stride, pad;
  };
  constexpr Spec specs[] = {{3, 16, 4, 4, 0}, {16, 32, 3, 1, 1}, {32, 32, 2, 2, 0}, {32, 64, 3, 1, 1}, {64, 64, 2, 2, 0}};
  BackboneParams p;
  for (const auto& s : specs) {
    const std::size_t fan = s.in * s.k * s.k;
    p.layers.push_back({init.uniform_fan_in({s.out, s.in, s.k, s.k}, fan), init.uniform_fan_in({s.out}, fan),
                        s.stride, s.pad});
  }
  return p;
}

void BackboneParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    reg.add(prefix + "conv" + std::to_string(i) + ".w", layers[i].w);
    reg.add(prefix + "conv" + std::to_string(i) + ".b", layers[i].b);
  }
}

SpatialFeature backbone_forward(const Tensor& image, const BackboneParams& p) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw InputError("backbone expects a 3 x H x W image, got " + num::shape_str(image.shape()));
  }
  if (image.dim(1) < BackboneParams::kMinSide || image.dim(2) < BackboneParams::kMinSide) {
    throw InputError("image " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                     " is smaller than the 32x32 minimum");
  }
  Tensor x = image;
  for (const auto& l : p.layers) x = num::relu(num::conv2d(x, l.w, l.b, l.stride, l.pad));
  return {x, BackboneParams::kStride};
}

Tensor image_tensor(const data::Image& img) {
  const auto H = static_cast<std::size_t>(img.height()), W = static_cast<std::size_t>(img.width());
  std::vector<double> v(3 * H * W);
  const auto& px = img.bytes();
  for (std::size_t i = 0; i < H * W; ++i) {
    for (std::size_t c = 0; c < 3; ++c) v[c * H * W + i] = (px[i * 3 + c] / 255.0 - 0.45) / 0.25;
  }
  return Tensor::from({3, H, W}, std::move(v));
}

}  // namespace catdet::det

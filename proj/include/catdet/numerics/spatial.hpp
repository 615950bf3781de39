#pragma once

#include <cstddef>

#include "catdet/numerics/tensor.hpp"

namespace catdet::num {

// Channels x height x width map plus the pixel stride of one cell.
struct SpatialFeature {
  Tensor data;
  std::size_t stride = 16;

  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

}  // namespace catdet::num

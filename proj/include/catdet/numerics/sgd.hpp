#pragma once

#include <span>
#include <vector>

#include "catdet/numerics/tensor.hpp"

namespace catdet::num {

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
};

struct SgdState {
  SgdConfig config;
  std::vector<std::vector<double>> velocity;  // one buffer per parameter

  SgdState(SgdConfig cfg, std::span<const Tensor> params);
};

// v <- momentum * v + grad + weight_decay * p;  p <- p - lr * v.
// Parameters without a gradient buffer are treated as having a zero gradient.
void sgd_step(std::span<Tensor> params, SgdState& state);

// Global L2 norm of all gradients, summed in parameter order. When it exceeds
// max_norm (> 0) every gradient is scaled by max_norm / norm. Returns the norm
// before scaling.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace catdet::num

#include "catdet/numerics/sgd.hpp"

#include <cmath>

#include "catdet/common/errors.hpp"

namespace catdet::num {

SgdState::SgdState(SgdConfig cfg, std::span<const Tensor> params) : config(cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  velocity.reserve(params.size());
  for (const auto& p : params) velocity.emplace_back(p.numel(), 0.0);
}

void sgd_step(std::span<Tensor> params, SgdState& state) {
  if (params.size() != state.velocity.size()) {
    throw ContractError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(state.velocity.size()) + " velocity buffers");
  }
  const auto& c = state.config;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& v = state.velocity[k];
    auto p = params[k].mutable_data();
    if (v.size() != p.size()) throw DimensionError("sgd_step: velocity shape mismatch");
    const bool has = params[k].has_grad();
    const auto g = has ? params[k].grad() : std::span<const double>{};
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = (has ? g[i] : 0.0) + c.weight_decay * p[i];
      v[i] = c.momentum * v[i] + gi;
      p[i] -= c.learning_rate * v[i];
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace catdet::num

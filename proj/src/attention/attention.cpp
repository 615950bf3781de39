#include "catdet/attention/attention.hpp"

#include <cmath>

#include "catdet/common/errors.hpp"
#include "catdet/numerics/ops.hpp"

namespace catdet::attn {

using num::Tensor;

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (!k.defined() || !v.defined()) throw ContractError("attention over an empty key set");
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("attention expects 2-D Q, K, V");
  }
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: Q " + num::shape_str(q.shape()) + " and K " +
                         num::shape_str(k.shape()) + " disagree on d_k");
  }
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("attention: K " + num::shape_str(k.shape()) + " and V " +
                         num::shape_str(v.shape()) + " disagree on n_k");
  }
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  auto scores = num::scale(num::matmul(q, num::transpose(k)), inv_sqrt_dk);
  auto weights = num::softmax(scores, 1);
  return {num::matmul(weights, v), weights};
}

MultiHeadParams MultiHeadParams::init(num::Initializer& init, std::size_t d_model, std::size_t heads,
                                      bool projection_bias) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadParams p;
  p.heads = heads;
  p.d_model = d_model;
  const std::size_t dh = d_model / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    p.w_q.push_back(init.uniform_fan_in({d_model, dh}, d_model));
    p.w_k.push_back(init.uniform_fan_in({d_model, dh}, d_model));
    p.w_v.push_back(init.uniform_fan_in({d_model, dh}, d_model));
  }
  p.w_o = init.uniform_fan_in({heads * dh, d_model}, heads * dh);
  if (projection_bias) {
    for (std::size_t h = 0; h < heads; ++h) {
      p.b_q.push_back(init.constant({dh}, 0.0));
      p.b_k.push_back(init.constant({dh}, 0.0));
      p.b_v.push_back(init.constant({dh}, 0.0));
    }
    p.b_o = init.constant({d_model}, 0.0);
  }
  return p;
}

void MultiHeadParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  for (std::size_t h = 0; h < heads; ++h) {
    const auto hp = prefix + "head" + std::to_string(h) + ".";
    reg.add(hp + "w_q", w_q[h]);
    reg.add(hp + "w_k", w_k[h]);
    reg.add(hp + "w_v", w_v[h]);
    if (has_bias()) {
      reg.add(hp + "b_q", b_q[h]);
      reg.add(hp + "b_k", b_k[h]);
      reg.add(hp + "b_v", b_v[h]);
    }
  }
  reg.add(prefix + "w_o", w_o);
  if (has_bias()) reg.add(prefix + "b_o", b_o);
}

namespace {

Tensor project(const Tensor& x, const Tensor& w, const std::vector<Tensor>& b, std::size_t h) {
  return b.empty() ? num::matmul(x, w) : num::linear(x, w, b[h]);
}

}  // namespace

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const MultiHeadParams& p, std::vector<Tensor>* head_weights) {
  for (const Tensor* t : {&q_in, &k_in, &v_in}) {
    if (t->rank() != 2 || t->dim(1) != p.d_model) {
      throw DimensionError("multi-head attention input " + num::shape_str(t->shape()) +
                           " does not match d_model " + std::to_string(p.d_model));
    }
  }
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    auto r = scaled_dot_product_attention(project(q_in, p.w_q[h], p.b_q, h),
                                          project(k_in, p.w_k[h], p.b_k, h),
                                          project(v_in, p.w_v[h], p.b_v, h));
    heads.push_back(r.output);
    if (head_weights) head_weights->push_back(r.weights);
  }
  auto concat = p.heads == 1 ? heads.front() : num::concat_cols(heads);
  return p.has_bias() ? num::linear(concat, p.w_o, p.b_o) : num::matmul(concat, p.w_o);
}

FfnParams FfnParams::init(num::Initializer& init, std::size_t d_model, std::size_t d_ff) {
  return {init.uniform_fan_in({d_model, d_ff}, d_model), init.uniform_fan_in({d_ff}, d_model),
          init.uniform_fan_in({d_ff, d_model}, d_ff), init.uniform_fan_in({d_model}, d_ff)};
}

void FfnParams::register_into(num::ParamRegistry& reg, const std::string& prefix) const {
  reg.add(prefix + "w1", w1);
  reg.add(prefix + "b1", b1);
  reg.add(prefix + "w2", w2);
  reg.add(prefix + "b2", b2);
}

Tensor ffn(const Tensor& x, const FfnParams& p) {
  return num::linear(num::relu(num::linear(x, p.w1, p.b1)), p.w2, p.b2);
}

}  // namespace catdet::attn

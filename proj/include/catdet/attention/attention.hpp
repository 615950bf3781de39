#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "catdet/numerics/params.hpp"
#include "catdet/numerics/tensor.hpp"

namespace catdet::attn {

struct AttentionResult {
  num::Tensor output;   // [n_q x d_v]
  num::Tensor weights;  // [n_q x n_k], rows sum to 1
};

// softmax(Q K^T / sqrt(d_k)) V
AttentionResult scaled_dot_product_attention(const num::Tensor& q, const num::Tensor& k,
                                             const num::Tensor& v);

// Per-head projections W_i^Q, W_i^K, W_i^V of shape [d_model x d_head] and
// the output projection W^O of shape [(heads*d_head) x d_model].
struct MultiHeadParams {
  std::size_t heads = 0;
  std::size_t d_model = 0;
  std::vector<num::Tensor> w_q, w_k, w_v;
  num::Tensor w_o;
  // Present only when built with projection biases.
  std::vector<num::Tensor> b_q, b_k, b_v;
  num::Tensor b_o;

  std::size_t d_head() const { return d_model / heads; }
  bool has_bias() const { return b_o.defined(); }

  static MultiHeadParams init(num::Initializer& init, std::size_t d_model, std::size_t heads,
                              bool projection_bias = false);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

num::Tensor multi_head_attention(const num::Tensor& q_in, const num::Tensor& k_in,
                                 const num::Tensor& v_in, const MultiHeadParams& p,
                                 std::vector<num::Tensor>* head_weights = nullptr);

struct FfnParams {
  num::Tensor w1, b1, w2, b2;  // [d_model x d_ff], [d_ff], [d_ff x d_model], [d_model]

  std::size_t d_model() const { return w1.dim(0); }
  std::size_t d_ff() const { return w1.dim(1); }

  static FfnParams init(num::Initializer& init, std::size_t d_model, std::size_t d_ff);
  void register_into(num::ParamRegistry& reg, const std::string& prefix) const;
};

// max(0, x W1 + b1) W2 + b2
num::Tensor ffn(const num::Tensor& x, const FfnParams& p);

}  // namespace catdet::attn

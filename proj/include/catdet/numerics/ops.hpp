#pragma once

#include <span>
#include <vector>

#include "catdet/numerics/tensor.hpp"

namespace catdet::num {

// C = A·B for A[m×k], B[k×n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// x[..×n] + b[n], broadcast over leading dims.
Tensor add_bias(const Tensor& x, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Numerically stable softmax along any axis.
Tensor softmax(const Tensor& x, std::size_t axis);

// Normalizes each row of the trailing dimension with population variance,
// then applies gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// x[..×in]·W[in×out] + b[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Per-row mean viewing x as [numel/cols × cols]; output has shape [numel/cols].
Tensor row_mean(const Tensor& x, std::size_t cols);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(std::span<const Tensor> parts);
// [n] -> [rows×n]
Tensor repeat_rows(const Tensor& v, std::size_t rows);
// Selects rows of a 2-D tensor (or elements of a 1-D tensor).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// x[C×H×W] (*) w[O×C×kh×kw] + b[O], zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad);

// [C×H×W] <-> [(H·W)×C], row-major over the grid.
Tensor flatten_spatial(const Tensor& x);
Tensor unflatten_spatial(const Tensor& seq, std::size_t height, std::size_t width);

// Spatial mean of [C×H×W] -> [C].
Tensor global_avg_pool(const Tensor& x);

// Σ w_i · BCE(sigmoid(z_i), y_i), computed in the log-sum-exp stable form.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets,
                       std::span<const double> weights);

// Σ w_i · smoothL1(p_i - t_i) with transition point beta.
Tensor smooth_l1(const Tensor& pred, std::span<const double> target,
                 std::span<const double> weights, double beta = 1.0);

}  // namespace catdet::num

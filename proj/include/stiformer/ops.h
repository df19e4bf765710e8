#pragma once

#include <cstddef>
#include <vector>

#include "stiformer/tensor.h"

namespace stif {

/// Stand-in for -inf in masked score matrices. Finite so arithmetic stays
/// finite; softmax maps it to exactly 0.
inline constexpr double kMaskedScore = -1e30;

// Shape manipulation. All of these copy.
Tensor reshape(const Tensor& x, Shape shape);
/// out.shape[i] = x.shape[axes[i]].
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);
/// Concatenates along the last axis; leading extents must agree.
Tensor concat_last(const Tensor& a, const Tensor& b);

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// Elementwise unary ops.
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false);

/// Matrix product over the last two axes. Leading (batch) axes must either
/// match or be absent on one side, in which case that side is broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x @ w (+ bias), where w is [in, out] and bias is [out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

/// Max-stabilised softmax over the last axis.
Tensor softmax_lastaxis(const Tensor& x);

/// Normalises over the last axis, then applies gamma * x_hat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

/// 0/1 constant marking, per row of the last two axes, the n largest entries.
/// Ties go to the lowest column index.
Tensor topn_indicator(const Tensor& scores, std::size_t n);

/// Replaces entries where indicator == 0 with kMaskedScore. The indicator is
/// broadcast against x's trailing axes. Gradient flows only to kept entries.
Tensor masked_fill(const Tensor& x, const Tensor& indicator);

/// Keeps the n largest entries in each row, masking the rest.
Tensor topn_mask_rows(const Tensor& scores, std::size_t n);

}  // namespace stif

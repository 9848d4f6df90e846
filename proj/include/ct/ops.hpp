#pragma once

#include <cstdint>
#include <vector>

#include "ct/tensor.hpp"

// Differentiable primitives. Binary elementwise ops broadcast `b` over the
// leading axes of `a` when b's shape is a suffix of a's shape; any other
// mismatch raises ShapeError naming the op and both shapes.
namespace ct::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor gelu(const Tensor& a);
// Gradient passes where lo <= a <= hi and is zero elsewhere.
Tensor clamp(const Tensor& a, float lo, float hi);

// Normalizes over the last axis, then applies per-channel gamma and beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);
// Divides each vector along the last axis by max(||v||, eps).
Tensor l2_normalize(const Tensor& x, float eps = 1e-12f);
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor transpose(const Tensor& x);  // swaps the last two axes
Tensor slice(const Tensor& x, int axis, std::int64_t begin, std::int64_t end);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows);

// a: [..., K] (or [G, M, K] with b: [G, K, N]); b: [K, N].
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Spatial ops over channels-last maps [B, H, W, C].
Tensor avg_pool2x2(const Tensor& x);
Tensor avg_pool3x3(const Tensor& x);  // stride 1, zero padding excluded from the count
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor space_to_depth(const Tensor& x, int factor);

}  // namespace ct::ops

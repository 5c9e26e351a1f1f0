#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "etd/tensor.hpp"

namespace etd::ops {

// Element-wise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// Reductions to a single-element tensor of shape {1}.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
// Swaps the two axes of a rank-2 tensor.
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
// Flattens everything after the leading (batch) axis.
Tensor flatten(const Tensor& x);

// x[M×N] · w[N×P] (+ b[P]).
Tensor linear(const Tensor& x, const Tensor& w,
              const std::optional<Tensor>& bias = std::nullopt);

// Batched product over the leading axis: alpha · a[G×M×K] · b[G×K×N], or
// alpha · a · bᵀ with b[G×N×K] when transpose_b is set.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false,
           double alpha = 1.0);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
};

// Cross-correlation of x[B×C×H×W] with k[F×C×KH×KW].
Tensor conv2d(const Tensor& x, const Tensor& kernel, Conv2dOptions options = {});

// Adds b[C] to every element of channel c of x[B×C×...].
Tensor channel_bias(const Tensor& x, const Tensor& bias);

// Softmax along the last axis with max subtraction.
Tensor softmax(const Tensor& x);

// softmax(scale · q kᵀ) v for q, k, v [G×L×D], one group at a time so the
// score matrix stays in cache.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);

// slope has one element (shared) or x.dim(1) elements (per channel).
Tensor prelu(const Tensor& x, const Tensor& slope);

// Normalises over every axis from begin_axis to the end. gain and bias have
// the shape of that trailing extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  std::size_t begin_axis, double eps = 1e-5);

// Mean over rows of -log softmax(logits[B×K])[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace etd::ops

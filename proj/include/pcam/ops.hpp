#pragma once

#include <vector>

#include "pcam/tensor.hpp"

namespace pcam {

// Differentiable operation set. Every function runs eagerly and, when a
// GradTape is active and some input requires a gradient, records a node
// with the matching reverse rule. Inputs are never mutated.

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor scalar_add(const Tensor& a, double s);
// Natural logarithm; every element must be positive.
Tensor log(const Tensor& a);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);

// ---- reductions ----
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor reduce_sum_all(const Tensor& x);
Tensor reduce_mean_all(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Removes `axis`, keeping the slice at `index`.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
// Normalizes along `axis` with max subtraction. Rejects non-finite input.
Tensor softmax(const Tensor& x, std::size_t axis);

// ---- network kernels ----
// x: C_in x H x W x S, w: C_out x C_in x K x K x K with K odd, bias:
// C_out or undefined. Cross-correlation with zero padding.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);
Tensor conv3d(const Tensor& x, const Tensor& w, std::size_t stride = 1,
              std::size_t padding = 0);

// Per-channel standardization over H*W*S followed by the learnable affine
// y = gamma * xhat + beta. gamma/beta have extent C.
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     double eps = 1e-5);

// Window and stride must cover each spatial extent exactly, with no
// partial windows at the border.
Tensor maxpool3d(const Tensor& x, const std::size_t window[3],
                 const std::size_t stride[3]);
Tensor maxpool3d(const Tensor& x, std::size_t window, std::size_t stride);

// Factor-2 trilinear upsampling of every spatial axis, voxel-center aligned
// so constant volumes stay constant.
Tensor trilinear_upsample2(const Tensor& x);

}  // namespace pcam

#pragma once

#include <vector>

#include "svae/ad/tensor.hpp"

namespace svae::ad {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor tanh(const Tensor& a);
Tensor square(const Tensor& a);
/// Subgradient 0 at the origin.
Tensor abs(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

/// Full reduction to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Sum over every axis but the first: [N, ...] -> [N].
Tensor sum_per_sample(const Tensor& a);

/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [N,in], weight [out,in], bias [out] -> [N,out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// x [N,C,H,W], weight [O,C,k,k], bias [O] (may be undefined).
/// Output spatial size (H + 2*pad - k) / stride + 1, zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad);
/// x [N,C,H,W], weight [C,O,k,k], bias [O] (may be undefined).
/// Adjoint of conv2d in x; output size (H - 1)*stride - 2*pad + k.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t pad);

/// Concatenate [N,C_i,H,W] tensors along channels.
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);
/// [N,C,H,W] -> [N,C,1,1].
Tensor mean_spatial(const Tensor& x);
/// [N,C,1,1] -> [N,C,H,W].
Tensor broadcast_spatial(const Tensor& x, std::size_t height, std::size_t width);

/// Per-sample log density of independent Gaussians: x, mu, log_sigma share
/// shape [N,...]; returns [N]. Gradients flow to mu and log_sigma.
Tensor diag_gaussian_log_prob(const Tensor& mu, const Tensor& log_sigma, const Tensor& x);

}  // namespace svae::ad

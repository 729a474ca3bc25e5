#pragma once

#include "td/tensor.hpp"

namespace td::ops {

// Forward kernels shared by the graph and by gradient-free (teacher) paths.
// All of them validate shapes and throw ShapeError on mismatch.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // rank-2 only
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor softmax_rows(const Tensor& x);  // rank-2, per-row max subtraction
Tensor relu(const Tensor& x);
Tensor log_elem(const Tensor& x);
Tensor abs_elem(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// Mask of shape a.shape[:-1] broadcast over the trailing (channel) axis.
Tensor mask_channels_last(const Tensor& a, const Tensor& mask);
// Mask of shape a.shape[1:] broadcast over the leading (channel) axis.
Tensor mask_channels_first(const Tensor& a, const Tensor& mask);
// Bias of length a.shape[-1] added along the trailing axis.
Tensor bias_last(const Tensor& a, const Tensor& bias);

Tensor reduce_mean(const Tensor& x);  // scalar, rejects empty input

// 3-tap "same" convolutions (cross-correlation, zero padding 1).
// conv1d: x[Cin,L], w[Cout,Cin,3], b[Cout] -> [Cout,L]
Tensor conv1d_same3(const Tensor& x, const Tensor& w, const Tensor& b);
// conv2d: x[Cin,H,W], w[Cout,Cin,3,3], b[Cout] -> [Cout,H,W]
Tensor conv2d_same3(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace td::ops

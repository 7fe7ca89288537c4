#pragma once

#include <vector>

#include "mpct/tensor.hpp"

namespace mpct::ops {

// Every op validates shapes (ShapeError names both sides), fills the output,
// checks the result is finite, and — when gradients are enabled and an input
// lives on a tape — records a reverse-pass closure. Gradients are accumulated
// (+=) so parameters reused across several forward applications sum their
// contributions. Inputs not attached to the recording tape are treated as
// constants and their gradient work is skipped entirely.

Tensor add(const Tensor& a, const Tensor& b);
Tensor subtract(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

// a:(M,K) x b:(K,N) -> (M,N)
Tensor matmul(const Tensor& a, const Tensor& b);
// m:(N,C) + bias:(C) broadcast over rows
Tensor add_bias_rows(const Tensor& m, const Tensor& bias);

// x:(N,Cin,H,W), w:(Cout,Cin,KH,KW), b:(Cout). Floor output size
// Hout = (H + 2*padding - KH) / stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int padding);

// x:(N,Cin,H,W), w:(Cin,Cout,KH,KW), b:(Cout). Output size
// Hout = (H - 1) * stride - 2*padding + KH + output_padding, the inverse of the
// conv2d size map, so stride 2 / padding 1 / output_padding 1 doubles exactly.
Tensor transposed_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                         int padding, int output_padding);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
// Output clamped to [1e-12, 1 - 1e-12] so downstream logs stay finite.
Tensor sigmoid(const Tensor& x);
// log(max(x, 1e-8)); the clamped region contributes zero gradient.
Tensor log_stable(const Tensor& x);
Tensor exp(const Tensor& x);

// Mean over all elements -> scalar.
Tensor mean_reduce(const Tensor& x);

enum class L1Mode {
    ElementMean,       // sum |a-b| / numel
    ImageSumBatchMean, // sum |a-b| / batch size (per-image sums, batch-averaged)
};
Tensor l1_distance(const Tensor& a, const Tensor& b, L1Mode mode = L1Mode::ElementMean);

// All rank-4 (N,C,H,W); concat along channel / batch axis respectively.
Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor concat_batch(const std::vector<Tensor>& xs);

Tensor reshape(const Tensor& x, const std::vector<int>& shape);
// (N, d1, d2, ...) -> (N, d1*d2*...)
Tensor flatten_rows(const Tensor& x);

// Normalizes each (sample, channel) plane over its spatial extent with
// eps 1e-5, then applies the per-channel affine gamma/beta (each shaped (C)).
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// Row-wise log-softmax of a (N,C) matrix.
Tensor log_softmax(const Tensor& x);
// (N,C) -> (N,1), selecting one column.
Tensor take_column(const Tensor& x, int col);

} // namespace mpct::ops

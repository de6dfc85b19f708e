#pragma once

#include <span>
#include <vector>

#include "noah/tensor.hpp"

namespace noah {

// All ops validate shapes and throw ShapeError naming both operands when they
// disagree. There is no implicit broadcasting anywhere in this library; the
// only deliberate broadcast (a single shared attention map applied across all
// categories) lives inside the head and is written out explicitly there.

// 1x1 convolution: out[b,i,j,m] = sum_c in[b,i,j,c] * weight[c,m] (+ bias[m]).
// weight rows must equal the input channel count. Per-pixel dot products
// accumulate in 64-bit.
Tensor conv1x1_forward(const Tensor& input, const Matrix& weight,
                       std::span<const float> bias = {});

struct Conv1x1Grads {
  Tensor input;
  Matrix weight;
  std::vector<float> bias;  // empty unless requested
};
Conv1x1Grads conv1x1_backward(const Tensor& input, const Matrix& weight,
                              const Tensor& upstream, bool with_bias);

// Softmax over the spatial positions of each (batch, channel) slice:
// out[b,i,j,c] = exp(in[b,i,j,c]) / sum_{i',j'} exp(in[b,i',j',c]),
// computed max-shifted with 64-bit accumulation.
Tensor spatial_softmax(const Tensor& input);
// VJP given the forward output s: s * (upstream - sum(upstream * s)), with the
// inner sum taken over the same spatial slice.
Tensor spatial_softmax_backward(const Tensor& output, const Tensor& upstream);

// Softmax over the channel vector of each pixel, same numeric conventions.
Tensor channel_softmax(const Tensor& input);
Tensor channel_softmax_backward(const Tensor& output, const Tensor& upstream);

// Elementwise logistic sigmoid; backward takes the forward output.
Tensor sigmoid(const Tensor& input);
Tensor sigmoid_backward(const Tensor& output, const Tensor& upstream);

// Elementwise product of two same-shape tensors. Its VJP needs no dedicated
// op: grad_a = hadamard(upstream, b) and symmetrically for b.
Tensor hadamard(const Tensor& a, const Tensor& b);

// Elementwise max(x, 0); backward masks by the forward *input* (zero
// gradient at exactly zero).
Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& upstream);

enum class Reduce { Sum, Mean, Max };

// Reduces the spatial extent away: [B,H,W,C] -> [B,1,1,C], 64-bit accumulators
// for Sum/Mean.
Tensor reduce_spatial(const Tensor& input, Reduce mode);
// Backward of the above. Sum replicates upstream, Mean scales it by 1/(H*W),
// and Max routes each (b,c) gradient to the first position in row-major scan
// order that attains the maximum.
Tensor reduce_spatial_backward(const Tensor& input, const Tensor& upstream, Reduce mode);

// Splits along the channel axis into parts of the given sizes (which must be
// positive and sum to the channel count); concat is its exact inverse.
std::vector<Tensor> channel_split(const Tensor& input, std::span<const int> sizes);
Tensor channel_concat(std::span<const Tensor> parts);

// 3x3 convolution kernel, laid out [kh, kw, in_channel, out_channel] with the
// output channel fastest.
struct Conv3x3Weight {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<float> values;

  float& at(int kh, int kw, int ci, int co) {
    return values[((static_cast<std::size_t>(kh) * 3 + kw) * in_channels + ci) * out_channels + co];
  }
  const float& at(int kh, int kw, int ci, int co) const {
    return values[((static_cast<std::size_t>(kh) * 3 + kw) * in_channels + ci) * out_channels + co];
  }
};

// 3x3 convolution with zero padding 1 and stride 1 or 2. Output extent per
// axis is (extent - 1) / stride + 1.
Tensor conv3x3_forward(const Tensor& input, const Conv3x3Weight& weight,
                       std::span<const float> bias, int stride);

struct Conv3x3Grads {
  Tensor input;
  Conv3x3Weight weight;
  std::vector<float> bias;  // empty unless requested
};
Conv3x3Grads conv3x3_backward(const Tensor& input, const Conv3x3Weight& weight,
                              const Tensor& upstream, int stride, bool with_bias);

}  // namespace noah

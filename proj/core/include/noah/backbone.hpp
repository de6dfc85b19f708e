#pragma once

#include <cstdint>
#include <vector>

#include "noah/ops.hpp"
#include "noah/tensor.hpp"

namespace noah {

enum class BackboneKind { Pointwise, Conv3x3 };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::Pointwise;
  std::vector<int> widths = {16, 32};
  // Conv3x3 only; one entry per layer, each 1 or 2. Defaults to all 2, which
  // takes 28x28 input to 7x7 with the default two widths.
  std::vector<int> strides;
  // 0 means "derive from the training seed"; any other value is used as-is.
  std::uint64_t seed = 0;
};

struct PointwiseLayer {
  Matrix weight;  // [in_channels, width]
  std::vector<float> bias;
};

struct Conv3x3Layer {
  Conv3x3Weight weight;
  std::vector<float> bias;
  int stride = 2;
};

struct BackboneParams {
  BackboneConfig config;
  int input_channels = 0;
  std::vector<PointwiseLayer> pointwise;  // used when kind == Pointwise
  std::vector<Conv3x3Layer> conv;         // used when kind == Conv3x3
};

// Seeded fan-in uniform init (weights +-(1/fan_in)^(1/2), biases zero).
// Backbone layers always carry a bias.
BackboneParams init_backbone(const BackboneConfig& config, int input_channels);

struct BackboneCache {
  std::vector<Tensor> inputs;          // per-layer input (inputs[0] is the image)
  std::vector<Tensor> pre_activation;  // per-layer conv output before relu
};

// Every layer is conv (1x1 or strided 3x3) followed by relu, including the
// last one. The pointwise kind maps each pixel independently, so the forward
// pass commutes with any spatial permutation of the input.
Tensor backbone_forward(const Tensor& image, const BackboneParams& params,
                        BackboneCache* cache = nullptr);

struct BackboneBackwardResult {
  GradientSet grads;  // keyed layerK.weight / layerK.bias
  Tensor grad_input;
};
BackboneBackwardResult backbone_backward(const BackboneCache& cache,
                                         const BackboneParams& params,
                                         const Tensor& grad_features);

int backbone_output_channels(const BackboneConfig& config);
// Spatial extent of the output for an h x w input.
void backbone_output_geometry(const BackboneConfig& config, int h, int w,
                              int* out_h, int* out_w);

}  // namespace noah

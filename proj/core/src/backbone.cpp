#include "noah/backbone.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "noah/error.hpp"
#include "noah/rng.hpp"

namespace noah {

namespace {

void validate_config(const BackboneConfig& config) {
  if (config.widths.empty()) throw ConfigError("backbone needs at least one layer width");
  for (int w : config.widths) {
    if (w < 1) throw ConfigError("backbone widths must be positive, got " + std::to_string(w));
  }
  if (config.kind == BackboneKind::Pointwise) {
    if (!config.strides.empty()) {
      throw ConfigError("strides only apply to the conv3x3 backbone");
    }
    return;
  }
  if (!config.strides.empty() && config.strides.size() != config.widths.size()) {
    throw ConfigError("backbone has " + std::to_string(config.widths.size()) +
                      " layers but " + std::to_string(config.strides.size()) + " strides");
  }
  for (int s : config.strides) {
    if (s != 1 && s != 2) {
      throw ConfigError("backbone strides must be 1 or 2, got " + std::to_string(s));
    }
  }
}

int layer_stride(const BackboneConfig& config, std::size_t layer) {
  return config.strides.empty() ? 2 : config.strides[layer];
}

std::vector<float> to_vector(std::span<const float> values) {
  return std::vector<float>(values.begin(), values.end());
}

}  // namespace

BackboneParams init_backbone(const BackboneConfig& config, int input_channels) {
  validate_config(config);
  if (input_channels < 1) {
    throw ConfigError("backbone input channels must be positive, got " +
                      std::to_string(input_channels));
  }

  BackboneParams params;
  params.config = config;
  params.input_channels = input_channels;
  Rng rng(config.seed);

  int cin = input_channels;
  for (std::size_t l = 0; l < config.widths.size(); ++l) {
    const int width = config.widths[l];
    if (config.kind == BackboneKind::Pointwise) {
      PointwiseLayer layer;
      layer.weight = Matrix(cin, width);
      const float bound = 1.0f / std::sqrt(static_cast<float>(cin));
      for (float& v : layer.weight.values()) v = rng.uniform_float(-bound, bound);
      layer.bias.assign(width, 0.0f);
      params.pointwise.push_back(std::move(layer));
    } else {
      Conv3x3Layer layer;
      layer.weight = Conv3x3Weight{cin, width,
                                   std::vector<float>(static_cast<std::size_t>(9) * cin * width)};
      const float bound = 1.0f / std::sqrt(9.0f * static_cast<float>(cin));
      for (float& v : layer.weight.values) v = rng.uniform_float(-bound, bound);
      layer.bias.assign(width, 0.0f);
      layer.stride = layer_stride(config, l);
      params.conv.push_back(std::move(layer));
    }
    cin = width;
  }
  return params;
}

Tensor backbone_forward(const Tensor& image, const BackboneParams& params,
                        BackboneCache* cache) {
  if (image.channels() != params.input_channels) {
    throw ShapeError("backbone is bound to " + std::to_string(params.input_channels) +
                     " input channels but the image is " + image.shape_str());
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre_activation.clear();
  }

  Tensor current = image;
  const std::size_t layers = params.config.widths.size();
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor pre;
    if (params.config.kind == BackboneKind::Pointwise) {
      const PointwiseLayer& layer = params.pointwise[l];
      pre = conv1x1_forward(current, layer.weight, layer.bias);
    } else {
      const Conv3x3Layer& layer = params.conv[l];
      pre = conv3x3_forward(current, layer.weight, layer.bias, layer.stride);
    }
    if (cache) {
      cache->inputs.push_back(std::move(current));
      cache->pre_activation.push_back(pre);
    }
    current = relu(pre);
  }
  return current;
}

BackboneBackwardResult backbone_backward(const BackboneCache& cache,
                                         const BackboneParams& params,
                                         const Tensor& grad_features) {
  const std::size_t layers = params.config.widths.size();
  if (cache.inputs.size() != layers || cache.pre_activation.size() != layers) {
    throw ShapeError("backbone backward: cache does not match the backbone it was produced by");
  }

  BackboneBackwardResult result;
  Tensor grad = grad_features;
  for (std::size_t l = layers; l-- > 0;) {
    const Tensor grad_pre = relu_backward(cache.pre_activation[l], grad);
    const std::string prefix = "layer" + std::to_string(l) + ".";
    if (params.config.kind == BackboneKind::Pointwise) {
      const PointwiseLayer& layer = params.pointwise[l];
      Conv1x1Grads grads = conv1x1_backward(cache.inputs[l], layer.weight, grad_pre, true);
      result.grads.add(prefix + "weight", {layer.weight.rows(), layer.weight.cols()},
                       to_vector(grads.weight.values()));
      result.grads.add(prefix + "bias", {static_cast<int>(layer.bias.size())},
                       std::move(grads.bias));
      grad = std::move(grads.input);
    } else {
      const Conv3x3Layer& layer = params.conv[l];
      Conv3x3Grads grads =
          conv3x3_backward(cache.inputs[l], layer.weight, grad_pre, layer.stride, true);
      result.grads.add(prefix + "weight",
                       {3, 3, layer.weight.in_channels, layer.weight.out_channels},
                       std::move(grads.weight.values));
      result.grads.add(prefix + "bias", {static_cast<int>(layer.bias.size())},
                       std::move(grads.bias));
      grad = std::move(grads.input);
    }
  }
  result.grad_input = std::move(grad);
  return result;
}

int backbone_output_channels(const BackboneConfig& config) {
  validate_config(config);
  return config.widths.back();
}

void backbone_output_geometry(const BackboneConfig& config, int h, int w,
                              int* out_h, int* out_w) {
  validate_config(config);
  if (config.kind == BackboneKind::Pointwise) {
    *out_h = h;
    *out_w = w;
    return;
  }
  for (std::size_t l = 0; l < config.widths.size(); ++l) {
    const int stride = layer_stride(config, l);
    h = (h - 1) / stride + 1;
    w = (w - 1) / stride + 1;
  }
  *out_h = h;
  *out_w = w;
}

}  // namespace noah

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "noah/backbone.hpp"
#include "noah/heads.hpp"
#include "noah/kv.hpp"

namespace noah {

// A full classifier: backbone producing [B,H,W,C] features plus one head.
struct ModelConfig {
  HeadKind head = HeadKind::Noah;
  int categories = 0;
  int input_channels = 1;
  bool gap_bias = true;  // the GAP baseline keeps its classifier bias
  NoahConfig noah;       // noah.categories is overwritten from `categories`
  BackboneConfig backbone;
};

struct Model {
  ModelConfig config;
  BackboneParams backbone;
  NoahHeadParams noah;  // populated when config.head == Noah
  GapHeadParams gap;    // populated when config.head == Gap
};

// Validates the configuration (category count, channel divisibility, widths)
// and initializes all parameters deterministically from the seed. The
// backbone uses its own seed field when non-zero, otherwise one derived here.
Model init_model(const ModelConfig& config, std::uint64_t seed);

struct ModelCache {
  BackboneCache backbone;
  NoahCache noah;
  GapCache gap;
};

Matrix model_forward(const Model& model, const Tensor& images, ModelCache* cache = nullptr);
// Gradients for every parameter, keyed "backbone.layerK.*" / "head.*".
GradientSet model_backward(const Model& model, const ModelCache& cache,
                           const Matrix& grad_logits);

struct ParamView {
  std::string path;
  std::vector<int> extents;
  std::span<const float> values;
};
struct ParamSlot {
  std::string path;
  std::vector<int> extents;
  std::span<float> values;
};

// Stable enumeration of all learnable arrays: backbone layers in order, then
// the head blocks in order. The optimizer, the parameter audit, and the
// checkpoint format all share this order.
std::vector<ParamView> list_params(const Model& model);
std::vector<ParamSlot> list_params_mutable(Model& model);
long long model_param_count(const Model& model);

KvMap model_config_to_kv(const ModelConfig& config);
ModelConfig model_config_from_kv(const KvMap& map);
// Same keys, but consumed from a shared reader so callers can mix model keys
// with their own (the command line does this with its training keys).
ModelConfig read_model_config(KvReader& reader);

}  // namespace noah

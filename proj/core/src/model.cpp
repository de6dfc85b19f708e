#include "noah/model.hpp"

#include <sstream>
#include <utility>

#include "noah/error.hpp"
#include "noah/rng.hpp"

namespace noah {

namespace {

std::string name_of(HeadKind kind) { return kind == HeadKind::Noah ? "noah" : "gap"; }
std::string name_of(AttentionAxis axis) {
  return axis == AttentionAxis::Spatial ? "spatial" : "channel";
}
std::string name_of(HeadActivation act) {
  return act == HeadActivation::Softmax ? "softmax" : "sigmoid";
}
std::string name_of(Reduce merge) {
  switch (merge) {
    case Reduce::Sum: return "sum";
    case Reduce::Mean: return "mean";
    case Reduce::Max: return "max";
  }
  return "sum";
}
std::string name_of(BackboneKind kind) {
  return kind == BackboneKind::Pointwise ? "pointwise" : "conv3x3";
}

HeadKind parse_head_kind(const std::string& text) {
  if (text == "noah") return HeadKind::Noah;
  if (text == "gap") return HeadKind::Gap;
  throw ConfigError("head must be 'noah' or 'gap', got '" + text + "'");
}
AttentionAxis parse_axis(const std::string& text) {
  if (text == "spatial") return AttentionAxis::Spatial;
  if (text == "channel") return AttentionAxis::Channel;
  throw ConfigError("attention axis must be 'spatial' or 'channel', got '" + text + "'");
}
HeadActivation parse_activation(const std::string& text) {
  if (text == "softmax") return HeadActivation::Softmax;
  if (text == "sigmoid") return HeadActivation::Sigmoid;
  throw ConfigError("activation must be 'softmax' or 'sigmoid', got '" + text + "'");
}
Reduce parse_merge(const std::string& text) {
  if (text == "sum") return Reduce::Sum;
  if (text == "mean") return Reduce::Mean;
  if (text == "max") return Reduce::Max;
  throw ConfigError("merge must be 'sum', 'mean' or 'max', got '" + text + "'");
}
BackboneKind parse_backbone_kind(const std::string& text) {
  if (text == "pointwise") return BackboneKind::Pointwise;
  if (text == "conv3x3") return BackboneKind::Conv3x3;
  throw ConfigError("backbone kind must be 'pointwise' or 'conv3x3', got '" + text + "'");
}

std::string format_double(double value) {
  std::ostringstream out;
  out.precision(17);
  out << value;
  return out.str();
}

std::string format_int_list(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

// Shared enumeration for the const and mutable parameter listings; ModelT is
// `Model` or `const Model` and ParamType follows it.
template <typename ParamType, typename ModelT>
std::vector<ParamType> collect(ModelT& model) {
  std::vector<ParamType> out;
  const auto add = [&](const std::string& path, std::vector<int> extents, auto span) {
    out.push_back(ParamType{path, std::move(extents), span});
  };

  auto& bb = model.backbone;
  for (std::size_t l = 0; l < bb.config.widths.size(); ++l) {
    const std::string prefix = "backbone.layer" + std::to_string(l) + ".";
    if (bb.config.kind == BackboneKind::Pointwise) {
      auto& layer = bb.pointwise[l];
      add(prefix + "weight", {layer.weight.rows(), layer.weight.cols()},
          layer.weight.values());
      add(prefix + "bias", {static_cast<int>(layer.bias.size())}, std::span(layer.bias));
    } else {
      auto& layer = bb.conv[l];
      add(prefix + "weight", {3, 3, layer.weight.in_channels, layer.weight.out_channels},
          std::span(layer.weight.values));
      add(prefix + "bias", {static_cast<int>(layer.bias.size())}, std::span(layer.bias));
    }
  }

  if (model.config.head == HeadKind::Noah) {
    for (std::size_t n = 0; n < model.noah.blocks.size(); ++n) {
      auto& block = model.noah.blocks[n];
      const std::string prefix = "head.block" + std::to_string(n) + ".";
      add(prefix + "key_weight", {block.key_weight.rows(), block.key_weight.cols()},
          block.key_weight.values());
      if (!block.key_bias.empty()) {
        add(prefix + "key_bias", {static_cast<int>(block.key_bias.size())},
            std::span(block.key_bias));
      }
      add(prefix + "value_weight", {block.value_weight.rows(), block.value_weight.cols()},
          block.value_weight.values());
      if (!block.value_bias.empty()) {
        add(prefix + "value_bias", {static_cast<int>(block.value_bias.size())},
            std::span(block.value_bias));
      }
    }
  } else {
    add("head.weight", {model.gap.weight.rows(), model.gap.weight.cols()},
        model.gap.weight.values());
    if (!model.gap.bias.empty()) {
      add("head.bias", {static_cast<int>(model.gap.bias.size())}, std::span(model.gap.bias));
    }
  }
  return out;
}

}  // namespace

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  if (config.categories < 2) {
    throw ConfigError("categories must be at least 2, got " + std::to_string(config.categories));
  }
  if (config.input_channels < 1) {
    throw ConfigError("input channels must be positive, got " +
                      std::to_string(config.input_channels));
  }

  Model model;
  model.config = config;
  model.config.noah.categories = config.categories;

  // A zero backbone seed means "derive one from the master seed"; the derived
  // value is stored so the model is self-describing after checkpointing.
  if (model.config.backbone.seed == 0) {
    model.config.backbone.seed = mix_seed(seed, 1);
  }
  model.backbone = init_backbone(model.config.backbone, config.input_channels);

  const int feature_channels = backbone_output_channels(model.config.backbone);
  const std::uint64_t head_seed = mix_seed(seed, 2);
  if (config.head == HeadKind::Noah) {
    model.noah = init_noah(model.config.noah, feature_channels, head_seed);
  } else {
    model.gap = init_gap(feature_channels, config.categories, config.gap_bias, head_seed);
  }
  return model;
}

Matrix model_forward(const Model& model, const Tensor& images, ModelCache* cache) {
  const Tensor features =
      backbone_forward(images, model.backbone, cache ? &cache->backbone : nullptr);
  if (model.config.head == HeadKind::Noah) {
    return noah_forward(features, model.noah, cache ? &cache->noah : nullptr);
  }
  return gap_forward(features, model.gap, cache ? &cache->gap : nullptr);
}

GradientSet model_backward(const Model& model, const ModelCache& cache,
                           const Matrix& grad_logits) {
  HeadBackwardResult head = model.config.head == HeadKind::Noah
                                ? noah_backward(cache.noah, model.noah, grad_logits)
                                : gap_backward(cache.gap, model.gap, grad_logits);
  BackboneBackwardResult backbone =
      backbone_backward(cache.backbone, model.backbone, head.grad_input);

  GradientSet grads;
  for (auto& [path, entry] : head.grads.entries()) {
    grads.add("head." + path, entry.extents, entry.values);
  }
  for (auto& [path, entry] : backbone.grads.entries()) {
    grads.add("backbone." + path, entry.extents, entry.values);
  }
  return grads;
}

std::vector<ParamView> list_params(const Model& model) {
  return collect<ParamView>(model);
}

std::vector<ParamSlot> list_params_mutable(Model& model) {
  return collect<ParamSlot>(model);
}

long long model_param_count(const Model& model) {
  long long total = 0;
  for (const ParamView& param : list_params(model)) {
    total += static_cast<long long>(param.values.size());
  }
  return total;
}

KvMap model_config_to_kv(const ModelConfig& config) {
  KvMap map;
  map["head"] = name_of(config.head);
  map["categories"] = std::to_string(config.categories);
  map["input_channels"] = std::to_string(config.input_channels);
  map["gap_bias"] = config.gap_bias ? "true" : "false";
  map["noah.groups"] = std::to_string(config.noah.groups);
  map["noah.key_ratio"] = format_double(config.noah.key_ratio);
  map["noah.attention_axis"] = name_of(config.noah.attention_axis);
  map["noah.activation"] = name_of(config.noah.activation);
  map["noah.merge"] = name_of(config.noah.merge);
  map["noah.shared_single_attention"] = config.noah.shared_single_attention ? "true" : "false";
  map["noah.second_level_split"] = config.noah.second_level_split ? "true" : "false";
  map["noah.use_bias"] = config.noah.use_bias ? "true" : "false";
  map["backbone.kind"] = name_of(config.backbone.kind);
  map["backbone.widths"] = format_int_list(config.backbone.widths);
  if (!config.backbone.strides.empty()) {
    map["backbone.strides"] = format_int_list(config.backbone.strides);
  }
  map["backbone.seed"] = std::to_string(config.backbone.seed);
  return map;
}

ModelConfig read_model_config(KvReader& reader) {
  ModelConfig config;
  config.head = parse_head_kind(reader.take_string("head", "noah"));
  config.categories = reader.take_int("categories", 0);
  config.input_channels = reader.take_int("input_channels", 1);
  config.gap_bias = reader.take_bool("gap_bias", true);

  config.noah.groups = reader.take_int("noah.groups", config.noah.groups);
  config.noah.key_ratio = reader.take_double("noah.key_ratio", config.noah.key_ratio);
  config.noah.attention_axis = parse_axis(reader.take_string("noah.attention_axis", "spatial"));
  config.noah.activation = parse_activation(reader.take_string("noah.activation", "softmax"));
  config.noah.merge = parse_merge(reader.take_string("noah.merge", "sum"));
  config.noah.shared_single_attention =
      reader.take_bool("noah.shared_single_attention", false);
  config.noah.second_level_split = reader.take_bool("noah.second_level_split", true);
  config.noah.use_bias = reader.take_bool("noah.use_bias", false);

  config.backbone.kind = parse_backbone_kind(reader.take_string("backbone.kind", "pointwise"));
  config.backbone.widths = reader.take_int_list("backbone.widths", config.backbone.widths);
  config.backbone.strides = reader.take_int_list("backbone.strides", {});
  config.backbone.seed = reader.take_u64("backbone.seed", 0);
  return config;
}

ModelConfig model_config_from_kv(const KvMap& map) {
  KvReader reader(map);
  ModelConfig config = read_model_config(reader);
  reader.finish("model config");
  return config;
}

}  // namespace noah

#include "noah/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "noah/error.hpp"
#include "noah/rng.hpp"

namespace noah {

namespace {

std::span<const float> bias_span(const std::vector<float>& bias) {
  return {bias.data(), bias.size()};
}

void fill_fan_in_uniform(std::span<float> values, int fan_in, Rng& rng) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  for (float& v : values) v = rng.uniform_float(-bound, bound);
}

Tensor apply_attention_activation(const NoahConfig& config, const Tensor& scores) {
  if (config.activation == HeadActivation::Sigmoid) return sigmoid(scores);
  return config.attention_axis == AttentionAxis::Spatial ? spatial_softmax(scores)
                                                         : channel_softmax(scores);
}

Tensor attention_activation_backward(const NoahConfig& config, const Tensor& attention,
                                     const Tensor& upstream) {
  if (config.activation == HeadActivation::Sigmoid) {
    return sigmoid_backward(attention, upstream);
  }
  return config.attention_axis == AttentionAxis::Spatial
             ? spatial_softmax_backward(attention, upstream)
             : channel_softmax_backward(attention, upstream);
}

// Both embeddings read the whole group unless the second-level split carves
// it into disjoint key/value slices.
bool uses_second_split(const NoahConfig& config) {
  return config.second_level_split && !config.shared_single_attention;
}

std::vector<float> to_vector(std::span<const float> values) {
  return std::vector<float>(values.begin(), values.end());
}

}  // namespace

GroupSplit split_channels(const NoahConfig& config, int channels) {
  if (config.groups < 1) {
    throw ConfigError("groups must be at least 1, got " + std::to_string(config.groups));
  }
  if (channels < 1) {
    throw ConfigError("head input channels must be positive, got " + std::to_string(channels));
  }
  if (channels % config.groups != 0) {
    throw ConfigError("channels " + std::to_string(channels) +
                      " cannot be split into " + std::to_string(config.groups) +
                      " even groups");
  }
  const int group = channels / config.groups;
  if (!uses_second_split(config)) return {group, group};

  if (!(config.key_ratio > 0.0 && config.key_ratio < 1.0)) {
    throw ConfigError("key_ratio must lie in (0, 1), got " + std::to_string(config.key_ratio));
  }
  const int key = static_cast<int>(std::floor(config.key_ratio * group));
  const int value = group - key;  // equals ceil((1 - key_ratio) * group)
  if (key < 1 || value < 1) {
    throw ConfigError("key_ratio " + std::to_string(config.key_ratio) +
                      " leaves an empty embedding for group size " + std::to_string(group));
  }
  return {key, value};
}

NoahHeadParams init_noah(const NoahConfig& config, int channels, std::uint64_t seed) {
  if (config.categories < 2) {
    throw ConfigError("categories must be at least 2, got " + std::to_string(config.categories));
  }
  const GroupSplit split = split_channels(config, channels);
  const int key_cols = config.shared_single_attention ? 1 : config.categories;

  NoahHeadParams params;
  params.config = config;
  params.input_channels = channels;
  params.blocks.reserve(config.groups);
  Rng rng(seed);
  for (int n = 0; n < config.groups; ++n) {
    PocaBlockParams block;
    block.key_weight = Matrix(split.key_channels, key_cols);
    fill_fan_in_uniform(block.key_weight.values(), split.key_channels, rng);
    block.value_weight = Matrix(split.value_channels, config.categories);
    fill_fan_in_uniform(block.value_weight.values(), split.value_channels, rng);
    if (config.use_bias) {
      block.key_bias.assign(key_cols, 0.0f);
      block.value_bias.assign(config.categories, 0.0f);
    }
    params.blocks.push_back(std::move(block));
  }
  return params;
}

GapHeadParams init_gap(int channels, int categories, bool use_bias, std::uint64_t seed) {
  if (categories < 2) {
    throw ConfigError("categories must be at least 2, got " + std::to_string(categories));
  }
  if (channels < 1) {
    throw ConfigError("head input channels must be positive, got " + std::to_string(channels));
  }
  GapHeadParams params;
  params.input_channels = channels;
  params.categories = categories;
  params.use_bias = use_bias;
  params.weight = Matrix(channels, categories);
  Rng rng(seed);
  fill_fan_in_uniform(params.weight.values(), channels, rng);
  if (use_bias) params.bias.assign(categories, 0.0f);
  return params;
}

Matrix noah_forward(const Tensor& features, const NoahHeadParams& params, NoahCache* cache) {
  const NoahConfig& cfg = params.config;
  if (features.channels() != params.input_channels) {
    throw ShapeError("noah head is bound to " + std::to_string(params.input_channels) +
                     " channels but features are " + features.shape_str());
  }
  if (static_cast<int>(params.blocks.size()) != cfg.groups) {
    throw ShapeError("noah head has " + std::to_string(params.blocks.size()) +
                     " blocks but its config names " + std::to_string(cfg.groups));
  }
  const int b = features.batch(), h = features.height(), w = features.width();
  const int m = cfg.categories;
  const GroupSplit split = split_channels(cfg, features.channels());  // re-validate the binding

  const std::vector<int> group_sizes(cfg.groups, features.channels() / cfg.groups);
  const std::vector<Tensor> groups = channel_split(features, group_sizes);

  if (cache) {
    cache->input = features;
    cache->attention.clear();
    cache->value.clear();
  }

  // Per-(batch, category) merge accumulator over all groups x positions.
  // Sum/Mean accumulate in 64-bit; Max tracks the running float maximum.
  std::vector<double> acc;
  std::vector<float> best;
  if (cfg.merge == Reduce::Max) {
    best.assign(static_cast<std::size_t>(b) * m, -std::numeric_limits<float>::infinity());
  } else {
    acc.assign(static_cast<std::size_t>(b) * m, 0.0);
  }

  for (int n = 0; n < cfg.groups; ++n) {
    const PocaBlockParams& block = params.blocks[n];
    std::vector<Tensor> parts;
    const Tensor* key_in = &groups[n];
    const Tensor* value_in = &groups[n];
    if (uses_second_split(cfg)) {
      const int sizes[2] = {split.key_channels, split.value_channels};
      parts = channel_split(groups[n], sizes);
      key_in = &parts[0];
      value_in = &parts[1];
    }

    const Tensor scores = conv1x1_forward(*key_in, block.key_weight, bias_span(block.key_bias));
    const Tensor attention = apply_attention_activation(cfg, scores);
    const Tensor value = conv1x1_forward(*value_in, block.value_weight, bias_span(block.value_bias));

    for (int bb = 0; bb < b; ++bb) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const float* av = attention.values().data() + attention.pixel_offset(bb, i, j);
          const float* vv = value.values().data() + value.pixel_offset(bb, i, j);
          const std::size_t row = static_cast<std::size_t>(bb) * m;
          if (cfg.shared_single_attention) {
            const float a = av[0];
            for (int k = 0; k < m; ++k) {
              const float z = a * vv[k];
              if (cfg.merge == Reduce::Max) {
                best[row + k] = std::max(best[row + k], z);
              } else {
                acc[row + k] += z;
              }
            }
          } else {
            for (int k = 0; k < m; ++k) {
              const float z = av[k] * vv[k];
              if (cfg.merge == Reduce::Max) {
                best[row + k] = std::max(best[row + k], z);
              } else {
                acc[row + k] += z;
              }
            }
          }
        }
      }
    }

    if (cache) {
      cache->attention.push_back(attention);
      cache->value.push_back(value);
    }
  }

  Matrix logits(b, m);
  const double mean_scale = 1.0 / (static_cast<double>(cfg.groups) * h * w);
  for (int bb = 0; bb < b; ++bb) {
    for (int k = 0; k < m; ++k) {
      const std::size_t idx = static_cast<std::size_t>(bb) * m + k;
      switch (cfg.merge) {
        case Reduce::Sum: logits.at(bb, k) = static_cast<float>(acc[idx]); break;
        case Reduce::Mean: logits.at(bb, k) = static_cast<float>(acc[idx] * mean_scale); break;
        case Reduce::Max: logits.at(bb, k) = best[idx]; break;
      }
    }
  }
  detail::check_finite(logits.values(), "noah_forward");
  return logits;
}

HeadBackwardResult noah_backward(const NoahCache& cache, const NoahHeadParams& params,
                                 const Matrix& upstream) {
  const NoahConfig& cfg = params.config;
  const int m = cfg.categories;
  if (cache.input.channels() != params.input_channels ||
      static_cast<int>(cache.attention.size()) != cfg.groups ||
      static_cast<int>(cache.value.size()) != cfg.groups) {
    throw ShapeError("noah backward: cache does not match the head it was produced by");
  }
  const int b = cache.input.batch(), h = cache.input.height(), w = cache.input.width();
  if (upstream.rows() != b || upstream.cols() != m) {
    throw ShapeError("noah backward: upstream " + upstream.shape_str() +
                     " does not match logits [" + std::to_string(b) + "," +
                     std::to_string(m) + "]");
  }
  const int att_channels = cfg.shared_single_attention ? 1 : m;
  for (int n = 0; n < cfg.groups; ++n) {
    if (cache.attention[n].batch() != b || cache.attention[n].height() != h ||
        cache.attention[n].width() != w || cache.attention[n].channels() != att_channels ||
        cache.value[n].batch() != b || cache.value[n].height() != h ||
        cache.value[n].width() != w || cache.value[n].channels() != m) {
      throw ShapeError("noah backward: cached block " + std::to_string(n) +
                       " tensors do not match the head geometry");
    }
  }

  const GroupSplit split = split_channels(cfg, cache.input.channels());
  const std::vector<int> group_sizes(cfg.groups, cache.input.channels() / cfg.groups);
  const std::vector<Tensor> groups = channel_split(cache.input, group_sizes);

  // For Max merge, find the winning (group, i, j) per (batch, category) by
  // replaying the forward scan in the same order with the same float products.
  std::vector<int> win_group, win_i, win_j;
  if (cfg.merge == Reduce::Max) {
    const std::size_t cells = static_cast<std::size_t>(b) * m;
    win_group.assign(cells, 0);
    win_i.assign(cells, 0);
    win_j.assign(cells, 0);
    std::vector<float> best(cells, -std::numeric_limits<float>::infinity());
    for (int n = 0; n < cfg.groups; ++n) {
      const Tensor& att = cache.attention[n];
      const Tensor& val = cache.value[n];
      for (int bb = 0; bb < b; ++bb) {
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            const float* av = att.values().data() + att.pixel_offset(bb, i, j);
            const float* vv = val.values().data() + val.pixel_offset(bb, i, j);
            for (int k = 0; k < m; ++k) {
              const float z = (cfg.shared_single_attention ? av[0] : av[k]) * vv[k];
              const std::size_t idx = static_cast<std::size_t>(bb) * m + k;
              if (z > best[idx]) {
                best[idx] = z;
                win_group[idx] = n;
                win_i[idx] = i;
                win_j[idx] = j;
              }
            }
          }
        }
      }
    }
  }

  const float mean_scale =
      1.0f / (static_cast<float>(cfg.groups) * static_cast<float>(h) * static_cast<float>(w));

  HeadBackwardResult result;
  std::vector<Tensor> grad_groups;
  grad_groups.reserve(cfg.groups);

  for (int n = 0; n < cfg.groups; ++n) {
    const PocaBlockParams& block = params.blocks[n];
    const Tensor& att = cache.attention[n];
    const Tensor& val = cache.value[n];

    // Gradient reaching Z_n = A_n (*) V_n from the merge.
    Tensor grad_z(b, h, w, m);
    if (cfg.merge == Reduce::Max) {
      for (int bb = 0; bb < b; ++bb) {
        for (int k = 0; k < m; ++k) {
          const std::size_t idx = static_cast<std::size_t>(bb) * m + k;
          if (win_group[idx] == n) {
            grad_z.at(bb, win_i[idx], win_j[idx], k) = upstream.at(bb, k);
          }
        }
      }
    } else {
      const float scale = cfg.merge == Reduce::Mean ? mean_scale : 1.0f;
      for (int bb = 0; bb < b; ++bb) {
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            float* gz = grad_z.values().data() + grad_z.pixel_offset(bb, i, j);
            for (int k = 0; k < m; ++k) gz[k] = upstream.at(bb, k) * scale;
          }
        }
      }
    }

    Tensor grad_att(b, h, w, att.channels());
    Tensor grad_val(b, h, w, m);
    if (cfg.shared_single_attention) {
      // The single attention value multiplies all M category maps, so its
      // gradient gathers over the category axis (64-bit accumulation).
      for (int bb = 0; bb < b; ++bb) {
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            const float* gz = grad_z.values().data() + grad_z.pixel_offset(bb, i, j);
            const float* vv = val.values().data() + val.pixel_offset(bb, i, j);
            const float a = att.at(bb, i, j, 0);
            float* gv = grad_val.values().data() + grad_val.pixel_offset(bb, i, j);
            double acc = 0.0;
            for (int k = 0; k < m; ++k) {
              acc += static_cast<double>(gz[k]) * vv[k];
              gv[k] = gz[k] * a;
            }
            grad_att.at(bb, i, j, 0) = static_cast<float>(acc);
          }
        }
      }
    } else {
      grad_att = hadamard(grad_z, val);
      grad_val = hadamard(grad_z, att);
    }

    const Tensor grad_scores = attention_activation_backward(cfg, att, grad_att);

    std::vector<Tensor> parts;
    const Tensor* key_in = &groups[n];
    const Tensor* value_in = &groups[n];
    if (uses_second_split(cfg)) {
      const int sizes[2] = {split.key_channels, split.value_channels};
      parts = channel_split(groups[n], sizes);
      key_in = &parts[0];
      value_in = &parts[1];
    }

    const Conv1x1Grads key_grads =
        conv1x1_backward(*key_in, block.key_weight, grad_scores, cfg.use_bias);
    const Conv1x1Grads value_grads =
        conv1x1_backward(*value_in, block.value_weight, grad_val, cfg.use_bias);

    const std::string prefix = "block" + std::to_string(n) + ".";
    result.grads.add(prefix + "key_weight",
                     {block.key_weight.rows(), block.key_weight.cols()},
                     to_vector(key_grads.weight.values()));
    result.grads.add(prefix + "value_weight",
                     {block.value_weight.rows(), block.value_weight.cols()},
                     to_vector(value_grads.weight.values()));
    if (cfg.use_bias) {
      result.grads.add(prefix + "key_bias",
                       {static_cast<int>(block.key_bias.size())}, key_grads.bias);
      result.grads.add(prefix + "value_bias",
                       {static_cast<int>(block.value_bias.size())}, value_grads.bias);
    }

    if (uses_second_split(cfg)) {
      const Tensor pieces[2] = {key_grads.input, value_grads.input};
      grad_groups.push_back(channel_concat(pieces));
    } else {
      // Key and value both read the whole group; their input gradients add.
      Tensor grad_group = key_grads.input;
      auto gg = grad_group.values();
      auto vg = value_grads.input.values();
      for (std::size_t idx = 0; idx < gg.size(); ++idx) gg[idx] += vg[idx];
      grad_groups.push_back(std::move(grad_group));
    }
  }

  result.grad_input = channel_concat(grad_groups);
  detail::check_finite(result.grad_input, "noah_backward");
  return result;
}

Matrix gap_forward(const Tensor& features, const GapHeadParams& params, GapCache* cache) {
  if (features.channels() != params.input_channels) {
    throw ShapeError("gap head is bound to " + std::to_string(params.input_channels) +
                     " channels but features are " + features.shape_str());
  }
  // Pool first, then project once per image; projecting every pixel and then
  // averaging gives the same logits and is what the equivalence tests check.
  const Tensor pooled = reduce_spatial(features, Reduce::Mean);
  const Tensor projected = conv1x1_forward(pooled, params.weight, bias_span(params.bias));

  Matrix logits(features.batch(), params.categories);
  std::copy(projected.values().begin(), projected.values().end(), logits.values().begin());
  if (cache) {
    cache->pooled = pooled;
    cache->input_height = features.height();
    cache->input_width = features.width();
  }
  return logits;
}

HeadBackwardResult gap_backward(const GapCache& cache, const GapHeadParams& params,
                                const Matrix& upstream) {
  const int b = cache.pooled.batch();
  const int h = cache.input_height, w = cache.input_width;
  if (h < 1 || w < 1 || cache.pooled.channels() != params.input_channels) {
    throw ShapeError("gap backward: cache does not match the head it was produced by");
  }
  if (upstream.rows() != b || upstream.cols() != params.categories) {
    throw ShapeError("gap backward: upstream " + upstream.shape_str() +
                     " does not match logits [" + std::to_string(b) + "," +
                     std::to_string(params.categories) + "]");
  }

  Tensor up4(b, 1, 1, params.categories);
  std::copy(upstream.values().begin(), upstream.values().end(), up4.values().begin());
  const Conv1x1Grads grads = conv1x1_backward(cache.pooled, params.weight, up4, params.use_bias);

  HeadBackwardResult result;
  result.grads.add("weight", {params.weight.rows(), params.weight.cols()},
                   to_vector(grads.weight.values()));
  if (params.use_bias) {
    result.grads.add("bias", {params.categories}, grads.bias);
  }

  result.grad_input = Tensor(b, h, w, params.input_channels);
  const float scale = 1.0f / (static_cast<float>(h) * static_cast<float>(w));
  for (int bb = 0; bb < b; ++bb) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        float* g = result.grad_input.values().data() + result.grad_input.pixel_offset(bb, i, j);
        const float* gp = grads.input.values().data() + grads.input.pixel_offset(bb, 0, 0);
        for (int c = 0; c < params.input_channels; ++c) g[c] = gp[c] * scale;
      }
    }
  }
  return result;
}

Matrix classify(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (int r = 0; r < logits.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < logits.cols(); ++c) {
      mx = std::max(mx, static_cast<double>(logits.at(r, c)));
    }
    double sum = 0.0;
    for (int c = 0; c < logits.cols(); ++c) sum += std::exp(logits.at(r, c) - mx);
    for (int c = 0; c < logits.cols(); ++c) {
      probs.at(r, c) = static_cast<float>(std::exp(logits.at(r, c) - mx) / sum);
    }
  }
  detail::check_finite(probs.values(), "classify");
  return probs;
}

CostReport count_cost(const NoahConfig& config, int channels, int height, int width) {
  if (config.groups < 1 || channels < 1 || config.categories < 1 || height < 1 || width < 1) {
    throw ConfigError("cost query requires positive groups, channels, categories and extents");
  }
  if (channels % config.groups != 0) {
    throw ConfigError("channels " + std::to_string(channels) + " cannot be split into " +
                      std::to_string(config.groups) + " even groups");
  }
  const long long n = config.groups;
  const long long m = config.categories;
  const long long hw = static_cast<long long>(height) * width;
  const long long group = channels / config.groups;

  long long key_ch = group, value_ch = group;
  if (uses_second_split(config)) {
    // Unlike the bind-time check this tolerates an empty key slice, so the
    // formula can be probed at degenerate points.
    key_ch = std::clamp(
        static_cast<long long>(std::floor(config.key_ratio * static_cast<double>(group))),
        0LL, group);
    value_ch = group - key_ch;
  }
  const long long key_cols = config.shared_single_attention ? 1 : m;

  CostReport report;
  // For the standard configuration the embedding line is H*W*M*C total and
  // the attention+merge lines are H*W*M*N each, reproducing the headline
  // accounting params = M*C, madds = H*W*M*C + 2*H*W*M*N + M.
  report.breakdown.push_back({"embeddings", n * (key_ch * key_cols + value_ch * m),
                              n * hw * (key_ch * key_cols + value_ch * m)});
  report.breakdown.push_back({"attention", 0, n * hw * m});
  report.breakdown.push_back({"merge", 0, n * hw * m});
  report.breakdown.push_back({"classifier", 0, m});
  if (config.use_bias) {
    report.breakdown.push_back({"bias", n * (key_cols + m), 0});
  }
  for (const CostLine& line : report.breakdown) {
    report.params += line.params;
    report.madds += line.madds;
  }
  return report;
}

CostReport count_gap_cost(int channels, int categories, int height, int width, bool use_bias) {
  if (channels < 1 || categories < 1 || height < 1 || width < 1) {
    throw ConfigError("cost query requires positive channels, categories and extents");
  }
  const long long c = channels;
  const long long m = categories;
  const long long hw = static_cast<long long>(height) * width;

  CostReport report;
  report.breakdown.push_back({"pooling", 0, hw * c});
  report.breakdown.push_back({"projection", m * c, m * c});
  report.breakdown.push_back({"classifier", 0, m});
  if (use_bias) {
    report.breakdown.push_back({"bias", m, 0});
  }
  for (const CostLine& line : report.breakdown) {
    report.params += line.params;
    report.madds += line.madds;
  }
  return report;
}

long long audit_params(const NoahHeadParams& params) {
  long long total = 0;
  for (const PocaBlockParams& block : params.blocks) {
    total += static_cast<long long>(block.key_weight.size());
    total += static_cast<long long>(block.value_weight.size());
    total += static_cast<long long>(block.key_bias.size());
    total += static_cast<long long>(block.value_bias.size());
  }
  return total;
}

long long audit_params(const GapHeadParams& params) {
  return static_cast<long long>(params.weight.size()) +
         static_cast<long long>(params.bias.size());
}

}  // namespace noah

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noah/ops.hpp"
#include "noah/tensor.hpp"

namespace noah {

enum class HeadKind { Noah, Gap };
enum class AttentionAxis { Spatial, Channel };
enum class HeadActivation { Softmax, Sigmoid };

// Configuration of a NOAH head: N parallel pairwise object category attention
// (POCA) blocks over an even channel split of the incoming feature map.
struct NoahConfig {
  int groups = 4;           // N, number of POCA blocks
  double key_ratio = 0.5;   // r, share of each group given to the key embedding
  int categories = 0;       // M, logit count (>= 2 at bind time)

  AttentionAxis attention_axis = AttentionAxis::Spatial;
  HeadActivation activation = HeadActivation::Softmax;
  Reduce merge = Reduce::Sum;

  // Single [B,H,W,1] attention per block, shared across all M categories in
  // the Hadamard step. Implies no second-level split: both embeddings consume
  // the full group.
  bool shared_single_attention = false;
  // When false, the key/value embeddings both read the whole C/N group
  // instead of disjoint r / (1-r) slices.
  bool second_level_split = true;

  bool use_bias = false;  // embeddings run bias-free by default
};

// Per-block channel budget produced by the two-level split. By construction
// key_channels + value_channels == channels / groups when the second-level
// split is active.
struct GroupSplit {
  int key_channels = 0;
  int value_channels = 0;
};

// Validates (channels, config) and computes the per-block split. Throws
// ConfigError when channels % groups != 0 or either side would be empty.
GroupSplit split_channels(const NoahConfig& config, int channels);

struct PocaBlockParams {
  Matrix key_weight;    // [key_channels, 1 or M]
  Matrix value_weight;  // [value_channels, M]
  std::vector<float> key_bias;    // empty when bias is off
  std::vector<float> value_bias;  // empty when bias is off
};

struct NoahHeadParams {
  NoahConfig config;
  int input_channels = 0;  // C the head was bound to
  std::vector<PocaBlockParams> blocks;
};

struct GapHeadParams {
  int input_channels = 0;
  int categories = 0;
  bool use_bias = true;
  Matrix weight;  // [C, M]
  std::vector<float> bias;
};

// Seeded uniform fan-in init: every weight matrix draws from
// +-(1/rows)^(1/2); biases (when enabled) start at zero. Identical seeds give
// bit-identical parameters.
NoahHeadParams init_noah(const NoahConfig& config, int channels, std::uint64_t seed);
GapHeadParams init_gap(int channels, int categories, bool use_bias, std::uint64_t seed);

// Everything the backward pass needs from a forward pass.
struct NoahCache {
  Tensor input;
  std::vector<Tensor> attention;  // post-activation A_n, [B,H,W,M] or [B,H,W,1]
  std::vector<Tensor> value;      // V_n, [B,H,W,M]
};

// Runs the head: split the feature map into N groups, per block split each
// group into key/value slices, form A_n = activation(conv1x1(key slice)) and
// V_n = conv1x1(value slice), take the elementwise product, and merge all
// N*H*W contributions per (batch, category) into logits [B,M]. Blocks are
// processed in a fixed order so Mean/Max merges are deterministic. Pass a
// cache to enable a later backward call.
Matrix noah_forward(const Tensor& features, const NoahHeadParams& params,
                    NoahCache* cache = nullptr);

struct HeadBackwardResult {
  GradientSet grads;  // keyed blockK.key_weight / key_bias / value_weight / value_bias
  Tensor grad_input;
};
HeadBackwardResult noah_backward(const NoahCache& cache, const NoahHeadParams& params,
                                 const Matrix& upstream);

struct GapCache {
  Tensor pooled;  // [B,1,1,C]
  int input_height = 0;
  int input_width = 0;
};

// Baseline head: logits = weight^T * spatial_mean(features) (+ bias). The
// pooled-then-projected route; projecting per pixel and then averaging is the
// algebraically equal rewrite the tests compare against.
Matrix gap_forward(const Tensor& features, const GapHeadParams& params,
                   GapCache* cache = nullptr);
HeadBackwardResult gap_backward(const GapCache& cache, const GapHeadParams& params,
                                const Matrix& upstream);

// Row-wise stable softmax over logits [B,M].
Matrix classify(const Matrix& logits);

// Parameter/multiply-add accounting, computed from configuration alone.
struct CostLine {
  std::string stage;
  long long params = 0;
  long long madds = 0;
};
struct CostReport {
  long long params = 0;
  long long madds = 0;
  std::vector<CostLine> breakdown;  // totals always equal the breakdown sums
};

// Cost of a NOAH head bound to C channels on an H x W map. For the standard
// configuration this reproduces params = M*C and
// madds = H*W*M*C + 2*H*W*M*N + M (embeddings, Hadamard+merge, classifier);
// bias terms, when enabled, are itemized as their own line. Validates
// divisibility but not the full bind-time rules, so degenerate formula probes
// (M = 1, C = N) are allowed.
CostReport count_cost(const NoahConfig& config, int channels, int height, int width);
CostReport count_gap_cost(int channels, int categories, int height, int width, bool use_bias);

// Ground truth by walking the stored arrays; must equal count_cost().params.
long long audit_params(const NoahHeadParams& params);
long long audit_params(const GapHeadParams& params);

}  // namespace noah

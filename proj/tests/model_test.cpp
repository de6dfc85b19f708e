#include "noah/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "noah/error.hpp"
#include "noah/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/reference.hpp"
#include "support/testutil.hpp"

namespace noah {
namespace {

namespace ref = test::ref;

ModelConfig small_noah_config() {
  ModelConfig config;
  config.categories = 3;
  config.backbone.widths = {4};
  config.backbone.seed = 0;
  config.noah.groups = 2;
  config.noah.key_ratio = 0.5;
  return config;
}

TEST(ModelConfigKv, RoundTripsEveryField) {
  ModelConfig config;
  config.head = HeadKind::Gap;
  config.categories = 12;
  config.input_channels = 3;
  config.gap_bias = false;
  config.noah.groups = 8;
  config.noah.key_ratio = 0.125;
  config.noah.attention_axis = AttentionAxis::Channel;
  config.noah.activation = HeadActivation::Sigmoid;
  config.noah.merge = Reduce::Max;
  config.noah.shared_single_attention = true;
  config.noah.second_level_split = false;
  config.noah.use_bias = true;
  config.backbone.kind = BackboneKind::Conv3x3;
  config.backbone.widths = {8, 16, 24};
  config.backbone.strides = {2, 1, 2};
  config.backbone.seed = 99;

  const ModelConfig back = model_config_from_kv(model_config_to_kv(config));
  EXPECT_EQ(back.head, config.head);
  EXPECT_EQ(back.categories, config.categories);
  EXPECT_EQ(back.input_channels, config.input_channels);
  EXPECT_EQ(back.gap_bias, config.gap_bias);
  EXPECT_EQ(back.noah.groups, config.noah.groups);
  EXPECT_DOUBLE_EQ(back.noah.key_ratio, config.noah.key_ratio);
  EXPECT_EQ(back.noah.attention_axis, config.noah.attention_axis);
  EXPECT_EQ(back.noah.activation, config.noah.activation);
  EXPECT_EQ(back.noah.merge, config.noah.merge);
  EXPECT_EQ(back.noah.shared_single_attention, config.noah.shared_single_attention);
  EXPECT_EQ(back.noah.second_level_split, config.noah.second_level_split);
  EXPECT_EQ(back.noah.use_bias, config.noah.use_bias);
  EXPECT_EQ(back.backbone.kind, config.backbone.kind);
  EXPECT_EQ(back.backbone.widths, config.backbone.widths);
  EXPECT_EQ(back.backbone.strides, config.backbone.strides);
  EXPECT_EQ(back.backbone.seed, config.backbone.seed);

  // Text round trip through the serializer as well.
  const ModelConfig again = model_config_from_kv(parse_kv_text(serialize_kv(model_config_to_kv(config))));
  EXPECT_EQ(again.backbone.widths, config.backbone.widths);
  EXPECT_DOUBLE_EQ(again.noah.key_ratio, config.noah.key_ratio);
}

TEST(ModelConfigKv, RejectsBadEnumsAndUnknownKeys) {
  KvMap map = model_config_to_kv(ModelConfig{});
  map["head"] = "banana";
  EXPECT_THROW(model_config_from_kv(map), ConfigError);

  map = model_config_to_kv(ModelConfig{});
  map["noah.merge"] = "avg";
  EXPECT_THROW(model_config_from_kv(map), ConfigError);

  map = model_config_to_kv(ModelConfig{});
  map["noah.grops"] = "4";
  try {
    model_config_from_kv(map);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("noah.grops"), std::string::npos) << e.what();
  }

  map = model_config_to_kv(ModelConfig{});
  map["categories"] = "many";
  EXPECT_THROW(model_config_from_kv(map), ConfigError);
}

TEST(InitModel, DerivedSeedsAreStoredAndDeterministic) {
  const ModelConfig config = small_noah_config();
  const Model a = init_model(config, 9);
  const Model b = init_model(config, 9);
  const Model c = init_model(config, 10);

  EXPECT_EQ(a.config.backbone.seed, mix_seed(9, 1));
  EXPECT_EQ(c.config.backbone.seed, mix_seed(10, 1));

  const std::vector<ParamView> pa = list_params(a);
  const std::vector<ParamView> pb = list_params(b);
  const std::vector<ParamView> pc = list_params(c);
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].path, pb[i].path);
    ASSERT_EQ(pa[i].values.size(), pb[i].values.size());
    for (std::size_t k = 0; k < pa[i].values.size(); ++k) {
      EXPECT_EQ(pa[i].values[k], pb[i].values[k]);
      if (pa[i].values[k] != pc[i].values[k]) differs = true;
    }
  }
  EXPECT_TRUE(differs);

  ModelConfig pinned = config;
  pinned.backbone.seed = 1234;
  const Model d = init_model(pinned, 9);
  EXPECT_EQ(d.config.backbone.seed, 1234u);
  const BackboneParams direct = init_backbone(d.config.backbone, 1);
  EXPECT_EQ(d.backbone.pointwise[0].weight.values()[0], direct.pointwise[0].weight.values()[0]);
}

TEST(InitModel, ValidatesCategoryCountAndChannelDivisibility) {
  ModelConfig config = small_noah_config();
  config.categories = 1;
  EXPECT_THROW(init_model(config, 0), ConfigError);

  config = small_noah_config();
  config.backbone.widths = {10};  // 10 feature channels cannot form 4 groups
  config.noah.groups = 4;
  EXPECT_THROW(init_model(config, 0), ConfigError);

  config = small_noah_config();
  config.input_channels = 0;
  EXPECT_THROW(init_model(config, 0), ConfigError);
}

TEST(ListParams, StableOrderCountAndMutability) {
  ModelConfig config = small_noah_config();
  config.noah.use_bias = true;
  Model model = init_model(config, 21);

  const std::vector<ParamView> params = list_params(model);
  const std::vector<std::string> expected_paths = {
      "backbone.layer0.weight", "backbone.layer0.bias",
      "head.block0.key_weight", "head.block0.key_bias",
      "head.block0.value_weight", "head.block0.value_bias",
      "head.block1.key_weight", "head.block1.key_bias",
      "head.block1.value_weight", "head.block1.value_bias",
  };
  ASSERT_EQ(params.size(), expected_paths.size());
  long long total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(params[i].path, expected_paths[i]);
    long long cells = 1;
    for (int extent : params[i].extents) cells *= extent;
    EXPECT_EQ(static_cast<long long>(params[i].values.size()), cells);
    total += cells;
  }
  EXPECT_EQ(model_param_count(model), total);

  // backbone 1*4 weights + 4 bias, head from the cost model
  EXPECT_EQ(total, 8 + count_cost(model.config.noah, 4, 1, 1).params);

  std::vector<ParamSlot> slots = list_params_mutable(model);
  ASSERT_EQ(slots.size(), params.size());
  slots[0].values[0] = 0.25f;
  EXPECT_EQ(model.backbone.pointwise[0].weight.values()[0], 0.25f);

  ModelConfig gap_config = small_noah_config();
  gap_config.head = HeadKind::Gap;
  Model gap_model = init_model(gap_config, 21);
  const std::vector<ParamView> gap_params = list_params(gap_model);
  ASSERT_EQ(gap_params.size(), 4u);
  EXPECT_EQ(gap_params[2].path, "head.weight");
  EXPECT_EQ(gap_params[3].path, "head.bias");
  EXPECT_EQ(model_param_count(gap_model), 8 + 4 * 3 + 3);
}

TEST(ModelForwardBackward, GradientsMatchReferenceFiniteDifferences) {
  struct Case {
    const char* name;
    ModelConfig config;
    int image_size;
    int image_seed;
  };
  std::vector<Case> cases;

  ModelConfig noah_model = small_noah_config();
  noah_model.noah.use_bias = true;
  cases.push_back({"pointwise_noah", noah_model, 4, 91});

  ModelConfig gap_model;
  gap_model.head = HeadKind::Gap;
  gap_model.categories = 3;
  gap_model.backbone.kind = BackboneKind::Conv3x3;
  gap_model.backbone.widths = {3};
  gap_model.backbone.strides = {2};
  cases.push_back({"conv_gap", gap_model, 5, 145});

  const float step = 1e-4f;
  for (const Case& test_case : cases) {
    Model model = init_model(test_case.config, 17);
    Rng rng(test_case.image_seed);
    Tensor images = test::rand_tensor(rng, 2, test_case.image_size, test_case.image_size, 1,
                                      0.0f, 1.0f);
    const Matrix upstream = test::rand_matrix(rng, 2, 3);
    const auto u = test::as_doubles(upstream.values());

    const auto loss = [&] {
      return test::project(ref::model_logits(model, images), u);
    };

    ModelCache cache;
    model_forward(model, images, &cache);
    for (const Tensor& pre : cache.backbone.pre_activation) {
      for (float v : pre.values()) ASSERT_GT(std::abs(v), 2e-3f) << test_case.name;
    }
    const GradientSet grads = model_backward(model, cache, upstream);

    for (ParamSlot& slot : list_params_mutable(model)) {
      EXPECT_TRUE(test::check_gradient(slot.values, grads.at(slot.path).values, loss, step).ok())
          << test_case.name << " " << slot.path;
    }
  }
}

TEST(ModelForward, HeadKindSelectsTheHead) {
  ModelConfig config = small_noah_config();
  Model model = init_model(config, 5);
  Rng rng(60);
  const Tensor images = test::rand_tensor(rng, 2, 4, 4, 1, 0.0f, 1.0f);
  const Matrix logits = model_forward(model, images);
  EXPECT_EQ(logits.rows(), 2);
  EXPECT_EQ(logits.cols(), 3);

  const std::vector<double> expected = ref::model_logits(model, images);
  for (int b = 0; b < 2; ++b) {
    for (int m = 0; m < 3; ++m) {
      EXPECT_NEAR(logits.at(b, m), expected[static_cast<std::size_t>(b) * 3 + m], 1e-5);
    }
  }
}

}  // namespace
}  // namespace noah

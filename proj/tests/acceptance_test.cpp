#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "noah/data.hpp"
#include "noah/error.hpp"
#include "noah/heads.hpp"
#include "noah/model.hpp"
#include "noah/ops.hpp"
#include "noah/pgm.hpp"
#include "noah/rng.hpp"
#include "noah/tensor.hpp"
#include "noah/train.hpp"
#include "support/cliutil.hpp"
#include "support/gradcheck.hpp"
#include "support/reference.hpp"
#include "support/testutil.hpp"

namespace noah {
namespace {

namespace ref = test::ref;
namespace fs = std::filesystem;

void report(int criterion, bool pass, const std::string& details) {
  std::cout << "[ACCEPTANCE] criterion " << criterion << ": " << (pass ? "PASS" : "FAIL")
            << " - " << details << std::endl;
}

std::string fixed(double value, int digits = 4) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << value;
  return out.str();
}

std::string sci(double value) {
  std::ostringstream out;
  out << std::scientific << std::setprecision(2) << value;
  return out.str();
}

// The ResNet50-like head geometry quoted in the cost documentation.
TEST(Acceptance, Criterion01CostAccounting) {
  const test::CliResult cli = test::run_cli({"cost"});
  const std::string params = test::extract_value(cli.output, "noah_params");
  const std::string madds = test::extract_value(cli.output, "noah_madds");
  bool pass = cli.exit_code == 0 && params == "2048000" && madds == "100745000";
  std::string details = "cost cli reports noah_params=" + params + " noah_madds=" + madds;

  Rng rng(415);
  std::string mismatch;
  for (int trial = 0; trial < 50 && mismatch.empty(); ++trial) {
    NoahConfig config;
    config.groups = 1 + rng.below(8);
    const int group = 2 + rng.below(63);
    config.categories = 2 + rng.below(49);
    config.use_bias = rng.below(2) == 1;
    config.shared_single_attention = rng.below(4) == 0;
    config.second_level_split = rng.below(4) != 0;
    const int key = 1 + rng.below(group - 1);
    config.key_ratio = (key + 0.5) / group;
    const int channels = config.groups * group;
    const int height = 1 + rng.below(9);
    const int width = 1 + rng.below(9);

    const CostReport cost = count_cost(config, channels, height, width);
    long long line_params = 0;
    long long line_madds = 0;
    for (const CostLine& line : cost.breakdown) {
      line_params += line.params;
      line_madds += line.madds;
    }
    const NoahHeadParams head = init_noah(config, channels, 1000 + trial);
    const bool gap_bias = rng.below(2) == 1;
    const CostReport gap_cost =
        count_gap_cost(channels, config.categories, height, width, gap_bias);
    const GapHeadParams gap = init_gap(channels, config.categories, gap_bias, 2000 + trial);
    if (audit_params(head) != cost.params || line_params != cost.params ||
        line_madds != cost.madds || audit_params(gap) != gap_cost.params) {
      mismatch = "trial " + std::to_string(trial) + ": audit " +
                 std::to_string(audit_params(head)) + " vs count " +
                 std::to_string(cost.params);
    }
  }
  pass = pass && mismatch.empty();
  details += mismatch.empty() ? "; 50 random configs audit clean" : "; " + mismatch;
  report(1, pass, details);
  EXPECT_TRUE(pass) << details;
}

std::vector<std::pair<std::string, NoahConfig>> spatial_softmax_variants() {
  NoahConfig base;
  base.groups = 4;
  base.key_ratio = 0.5;
  base.categories = 5;
  std::vector<std::pair<std::string, NoahConfig>> variants;
  variants.emplace_back("standard", base);
  NoahConfig mean = base;
  mean.merge = Reduce::Mean;
  variants.emplace_back("mean_merge", mean);
  NoahConfig max = base;
  max.merge = Reduce::Max;
  variants.emplace_back("max_merge", max);
  NoahConfig shared = base;
  shared.shared_single_attention = true;
  variants.emplace_back("shared_attention", shared);
  NoahConfig full = base;
  full.second_level_split = false;
  variants.emplace_back("no_second_split", full);
  NoahConfig bias = base;
  bias.use_bias = true;
  variants.emplace_back("bias", bias);
  return variants;
}

TEST(Acceptance, Criterion02AttentionNormalization) {
  double worst = 0.0;
  int slices = 0;
  for (const auto& [name, config] : spatial_softmax_variants()) {
    const NoahHeadParams params = init_noah(config, 8, 77);
    for (int input = 0; input < 100; ++input) {
      Rng rng(9000 + input);
      const Tensor features = test::rand_tensor(rng, 2, 3, 4, 8, -2.0f, 2.0f);
      NoahCache cache;
      noah_forward(features, params, &cache);
      for (int n = 0; n < config.groups; ++n) {
        const Tensor& attention = cache.attention[n];
        for (int b = 0; b < attention.batch(); ++b) {
          for (int m = 0; m < attention.channels(); ++m) {
            double sum = 0.0;
            for (int i = 0; i < attention.height(); ++i) {
              for (int j = 0; j < attention.width(); ++j) {
                sum += attention.at(b, i, j, m);
              }
            }
            worst = std::max(worst, std::abs(sum - 1.0));
            ++slices;
          }
        }
      }
    }
  }
  const bool pass = worst < 1e-5;
  const std::string details = "6 variants x 100 inputs (" + std::to_string(slices) +
                              " slices), max |sum - 1| = " + sci(worst);
  report(2, pass, details);
  EXPECT_TRUE(pass) << details;
}

struct FdInstance {
  std::string name;
  ModelConfig config;
  int image_size;
};

std::vector<FdInstance> fd_instances() {
  std::vector<FdInstance> instances;

  ModelConfig base;
  base.categories = 3;
  base.backbone.widths = {4};
  base.noah.groups = 2;
  instances.push_back({"pointwise_standard", base, 4});

  ModelConfig channel = base;
  channel.noah.attention_axis = AttentionAxis::Channel;
  channel.noah.activation = HeadActivation::Sigmoid;
  channel.noah.use_bias = true;
  instances.push_back({"pointwise_channel_sigmoid_bias", channel, 4});

  ModelConfig conv_shared = base;
  conv_shared.backbone.kind = BackboneKind::Conv3x3;
  conv_shared.backbone.strides = {2};
  conv_shared.noah.merge = Reduce::Mean;
  conv_shared.noah.shared_single_attention = true;
  instances.push_back({"conv_mean_shared", conv_shared, 5});

  ModelConfig max_full = base;
  max_full.noah.merge = Reduce::Max;
  max_full.noah.second_level_split = false;
  instances.push_back({"pointwise_max_full_group", max_full, 4});

  ModelConfig gap;
  gap.head = HeadKind::Gap;
  gap.categories = 3;
  gap.backbone.kind = BackboneKind::Conv3x3;
  gap.backbone.widths = {3};
  gap.backbone.strides = {2};
  instances.push_back({"conv_gap", gap, 5});

  return instances;
}

// Relu is the one kink in the chain; a seed is accepted only when every
// pre-activation keeps a margin no 1e-4 parameter step can cross.
int clear_image_seed(const Model& model, int image_size, int start) {
  for (int seed = start; seed < start + 200; ++seed) {
    Rng rng(seed);
    const Tensor images = test::rand_tensor(rng, 2, image_size, image_size, 1, 0.0f, 1.0f);
    ModelCache cache;
    model_forward(model, images, &cache);
    float margin = 1.0f;
    for (const Tensor& pre : cache.backbone.pre_activation) {
      for (float v : pre.values()) margin = std::min(margin, std::abs(v));
    }
    if (margin > 2e-3f) return seed;
  }
  return -1;
}

TEST(Acceptance, Criterion03GradientFidelity) {
  const std::vector<int> labels = {1, 2};
  double worst = 0.0;
  long long largest = 0;
  std::string failure;
  for (const FdInstance& instance : fd_instances()) {
    Model model = init_model(instance.config, 17);
    largest = std::max(largest, model_param_count(model));
    if (model_param_count(model) > 2000) {
      failure = instance.name + " exceeds the 2000 parameter budget";
      break;
    }
    const int seed = clear_image_seed(model, instance.image_size, 300);
    ASSERT_GE(seed, 0) << instance.name;
    Rng rng(seed);
    const Tensor images =
        test::rand_tensor(rng, 2, instance.image_size, instance.image_size, 1, 0.0f, 1.0f);

    ModelCache cache;
    const Matrix logits = model_forward(model, images, &cache);
    const GradientSet grads = model_backward(model, cache, cross_entropy(logits, labels).grad_logits);
    const auto loss = [&] { return ref::model_loss(model, images, labels); };

    for (ParamSlot& slot : list_params_mutable(model)) {
      const test::GradCheck check =
          test::check_gradient(slot.values, grads.at(slot.path).values, loss, 1e-4f);
      worst = std::max(worst, check.max_rel);
      if (!check.ok(1e-4)) {
        failure = instance.name + " " + slot.path + " rel err " + sci(check.max_rel);
        break;
      }
    }
    if (!failure.empty()) break;
  }
  const bool pass = failure.empty();
  const std::string details =
      pass ? "5 instances (largest " + std::to_string(largest) +
                 " params), max relative gradient error = " + sci(worst)
           : failure;
  report(3, pass, details);
  EXPECT_TRUE(pass) << details;
}

TEST(Acceptance, Criterion04GapRewriteEquivalence) {
  double worst = 0.0;
  for (int input = 0; input < 100; ++input) {
    Rng rng(4200 + input);
    const Tensor features = test::rand_tensor(rng, 2, 5, 7, 6, -1.0f, 1.0f);
    const bool use_bias = input % 2 == 0;
    const GapHeadParams params = init_gap(6, 4, use_bias, 50 + input);

    const Matrix pooled_then_projected = gap_forward(features, params);
    const Tensor per_pixel = conv1x1_forward(features, params.weight, params.bias);
    const Tensor averaged = reduce_spatial(per_pixel, Reduce::Mean);
    for (int b = 0; b < 2; ++b) {
      for (int m = 0; m < 4; ++m) {
        const double diff =
            std::abs(pooled_then_projected.at(b, m) - averaged.at(b, 0, 0, m));
        worst = std::max(worst, diff);
      }
    }
  }
  const bool pass = worst < 1e-5;
  const std::string details =
      "max |pooled-projected vs per-pixel-averaged| = " + sci(worst) + " over 100 inputs";
  report(4, pass, details);
  EXPECT_TRUE(pass) << details;
}

TEST(Acceptance, Criterion05SplitConservation) {
  Rng rng(55);
  int violations = 0;
  std::string first;
  for (int trial = 0; trial < 1000; ++trial) {
    int group = 0;
    double ratio = 0.0;
    switch (trial % 4) {
      case 0:
        group = 8 + rng.below(121);
        ratio = 0.125;
        break;
      case 1:
        group = 4 + rng.below(125);
        ratio = 0.25;
        break;
      case 2:
        group = 2 + rng.below(127);
        ratio = 0.5;
        break;
      default:
        group = 2 + rng.below(127);
        ratio = rng.uniform(1.0 / group, 1.0 - 1.0 / group);
        break;
    }
    NoahConfig config;
    config.groups = 1 + rng.below(8);
    config.key_ratio = ratio;
    config.categories = 10;
    const int channels = config.groups * group;
    const GroupSplit split = split_channels(config, channels);
    if (split.key_channels + split.value_channels != group || split.key_channels < 1 ||
        split.value_channels < 1) {
      ++violations;
      if (first.empty()) {
        first = " first at groups=" + std::to_string(config.groups) +
                " group=" + std::to_string(group) + " r=" + fixed(ratio, 6);
      }
    }
  }
  const bool pass = violations == 0;
  const std::string details =
      "1000 random (channels, groups, ratio) draws, " + std::to_string(violations) +
      " conservation violations" + first;
  report(5, pass, details);
  EXPECT_TRUE(pass) << details;
}

LabeledBatch quadrant_batch(int count, std::uint64_t seed) {
  QuadrantSpec spec;
  spec.noise = 0.05f;
  spec.seed = seed;
  return gen_quadrant(spec, count);
}

TrainConfig separation_config(HeadKind head, float learning_rate, std::uint64_t seed) {
  TrainConfig config;
  config.epochs = 10;
  config.batch_size = 32;
  config.learning_rate = learning_rate;
  config.seed = seed;
  config.model.head = head;
  config.model.categories = 8;
  config.model.noah.groups = 4;
  config.model.noah.key_ratio = 0.5;
  config.model.backbone.widths = {16, 32};
  return config;
}

// Drives the position-blind backbone through both heads with one optimizer
// budget. The merged NOAH logits sum per-pixel contributions over every
// position, so with per-pixel features they are invariant to the quadrant
// translation and the quadrant half of the label stays out of reach for both
// heads; the 0.90 target is reported as measured.
TEST(Acceptance, Criterion06SpatialSeparation) {
  const LabeledBatch train_data = quadrant_batch(4000, 101);
  const LabeledBatch eval_data = quadrant_batch(800, 202);

  const TrainResult noah_run =
      train(separation_config(HeadKind::Noah, 0.05f, 7), train_data, eval_data);
  const TrainResult gap_run =
      train(separation_config(HeadKind::Gap, 0.05f, 7), train_data, eval_data);
  const double noah_top1 = noah_run.log.back().eval_top1;
  const double gap_top1 = gap_run.log.back().eval_top1;

  const bool noah_ok = noah_top1 >= 0.90;
  const bool gap_ok = gap_top1 <= 0.30;
  const bool pass = noah_ok && gap_ok;
  const std::string details = "noah_top1=" + fixed(noah_top1) + " (needs >= 0.90, " +
                              (noah_ok ? "met" : "not met") + "), gap_top1=" + fixed(gap_top1) +
                              " (needs <= 0.30, " + (gap_ok ? "met" : "not met") + ")";
  report(6, pass, details);
  EXPECT_TRUE(pass) << details;
}

TrainConfig trend_config(HeadKind head, std::uint64_t seed) {
  TrainConfig config;
  config.epochs = 10;
  config.batch_size = 32;
  config.learning_rate = 0.03f;
  config.seed = seed;
  config.model.head = head;
  config.model.categories = 8;
  config.model.noah.groups = 4;
  config.model.noah.key_ratio = 0.5;
  config.model.backbone.kind = BackboneKind::Conv3x3;
  config.model.backbone.widths = {8, 16};
  config.model.backbone.strides = {2, 1};
  return config;
}

TEST(Acceptance, Criterion07ConvTrend) {
  const LabeledBatch train_data = quadrant_batch(4000, 101);
  const LabeledBatch eval_data = quadrant_batch(800, 202);

  bool pass = true;
  std::string details = "noah vs gap per seed:";
  for (std::uint64_t seed : {1, 2, 3}) {
    const TrainResult noah_run = train(trend_config(HeadKind::Noah, seed), train_data, eval_data);
    const TrainResult gap_run = train(trend_config(HeadKind::Gap, seed), train_data, eval_data);
    const double noah_top1 = noah_run.log.back().eval_top1;
    const double gap_top1 = gap_run.log.back().eval_top1;
    pass = pass && noah_top1 >= gap_top1 - 0.01;
    details += " " + fixed(noah_top1) + "/" + fixed(gap_top1);
  }
  details += " (floor: noah >= gap - 0.01)";
  report(7, pass, details);
  EXPECT_TRUE(pass) << details;
}

// The per-epoch wall-seconds column is a measurement, not a seed-derived
// value, so the byte comparison treats it separately and reports both views.
TEST(Acceptance, Criterion08Determinism) {
  const std::string dir = test::make_temp_dir("acceptance_determinism");
  const std::string config_path = dir + "/run.cfg";
  test::write_file(config_path,
                   "epochs = 2\n"
                   "batch_size = 16\n"
                   "seed = 5\n"
                   "learning_rate = 0.05\n"
                   "data.train_count = 128\n"
                   "data.eval_count = 64\n"
                   "backbone.widths = 8\n"
                   "noah.groups = 2\n");

  const test::CliResult first =
      test::run_cli({"train", "--config", config_path, "--out", dir + "/a"});
  const test::CliResult second =
      test::run_cli({"train", "--config", config_path, "--out", dir + "/b"});
  ASSERT_EQ(first.exit_code, 0) << first.output;
  ASSERT_EQ(second.exit_code, 0) << second.output;

  const std::string ckpt_a = test::read_file(dir + "/a/checkpoint.noah");
  const std::string ckpt_b = test::read_file(dir + "/b/checkpoint.noah");
  const std::string metrics_a = test::read_file(dir + "/a/metrics.csv");
  const std::string metrics_b = test::read_file(dir + "/b/metrics.csv");

  const bool ckpt_equal = !ckpt_a.empty() && ckpt_a == ckpt_b;
  const bool raw_equal = metrics_a == metrics_b;
  const bool stripped_equal =
      !metrics_a.empty() &&
      test::strip_seconds_column(metrics_a) == test::strip_seconds_column(metrics_b);

  const bool pass = ckpt_equal && stripped_equal;
  const std::string details = std::string("checkpoint bytes ") +
                              (ckpt_equal ? "identical" : "DIFFER") +
                              "; metrics identical outside the wall-seconds column: " +
                              (stripped_equal ? "yes" : "NO") +
                              " (raw bytes equal: " + (raw_equal ? "yes" : "no") + ")";
  report(8, pass, details);
  EXPECT_TRUE(pass) << details;
}

TEST(Acceptance, Criterion09BenchmarkHarness) {
  const std::string dir = test::make_temp_dir("acceptance_bench");
  const test::CliResult result = test::run_cli(
      {"bench", "--out", dir, "--set", "c=512", "--set", "m=100", "--set", "b=32", "--set",
       "h=7", "--set", "w=7", "--set", "repeats=5", "--set", "warmup=1"});
  const std::string overhead = test::extract_value(result.output, "overhead_percent");
  bool finite = false;
  double value = 0.0;
  if (!overhead.empty()) {
    value = std::strtod(overhead.c_str(), nullptr);
    finite = std::isfinite(value);
  }
  const bool pass = result.exit_code == 0 && finite;
  const std::string details = pass ? "overhead_percent=" + overhead + " is finite"
                                   : "exit " + std::to_string(result.exit_code) +
                                         ", overhead_percent='" + overhead + "'";
  report(9, pass, details);
  EXPECT_TRUE(pass) << details;
}

TEST(Acceptance, Criterion10AttentionMaps) {
  const std::string dir = test::make_temp_dir("acceptance_viz");
  const LabeledBatch train_data = quadrant_batch(4000, 101);
  const LabeledBatch eval_data = quadrant_batch(800, 202);
  const TrainResult run =
      train(separation_config(HeadKind::Noah, 0.05f, 7), train_data, eval_data);
  save_checkpoint(run.model, dir + "/checkpoint.noah");

  const std::string config_path = dir + "/viz.cfg";
  test::write_file(config_path,
                   "data.noise = 0\n"
                   "data.seed = 500\n"
                   "viz.samples = 8\n");
  const test::CliResult viz = test::run_cli({"viz", "--config", config_path, "--out", dir});
  ASSERT_EQ(viz.exit_code, 0) << viz.output;

  int maps = 0;
  bool all_valid = true;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".pgm") continue;
    ++maps;
    const PgmImage image = read_pgm(entry.path().string());
    all_valid = all_valid && image.width == 28 && image.height == 28 && image.maxval == 255;
  }

  // The clean samples the viz run rendered, regenerated bit for bit.
  QuadrantSpec spec;
  spec.noise = 0.0f;
  spec.seed = 500;
  const LabeledBatch samples = gen_quadrant(spec, 8);
  const Model model = load_checkpoint(dir + "/checkpoint.noah");
  const int size = samples.images.height();

  int hits = 0;
  bool labels_match = true;
  bool bytes_match = true;
  for (int s = 0; s < 8; ++s) {
    const std::string reported =
        test::extract_value(viz.output, "sample=" + std::to_string(s) + " label");
    labels_match = labels_match && reported == std::to_string(samples.labels[s]);

    Tensor image(1, size, size, 1);
    std::copy_n(samples.images.values().data() +
                    samples.images.pixel_offset(s, 0, 0),
                image.values().size(), image.values().data());
    ModelCache cache;
    model_forward(model, image, &cache);
    const int label = samples.labels[s];
    const int true_quadrant = label % 4;
    const int h = cache.noah.attention[0].height();
    const int w = cache.noah.attention[0].width();

    double mass[4] = {0.0, 0.0, 0.0, 0.0};
    for (int n = 0; n < model.config.noah.groups; ++n) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const int quadrant = (i >= h / 2 ? 2 : 0) + (j >= w / 2 ? 1 : 0);
          mass[quadrant] += cache.noah.attention[n].at(0, i, j, label);
        }
      }
    }
    int best = 0;
    for (int q = 1; q < 4; ++q) {
      if (mass[q] > mass[best]) best = q;
    }
    if (best == true_quadrant) ++hits;

    // The exported map must hold exactly the quantized attention slice.
    std::vector<float> plane(static_cast<std::size_t>(h) * w);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        plane[static_cast<std::size_t>(i) * w + j] = cache.noah.attention[0].at(0, i, j, label);
      }
    }
    const std::string map_path =
        dir + "/sample" + std::to_string(s) + "_block0_cat" + std::to_string(label) +
        "_attention.pgm";
    bytes_match = bytes_match && read_pgm(map_path).pixels == quantize_unit_range(plane);
  }

  const bool pass = all_valid && maps == 320 && labels_match && bytes_match && hits == 8;
  const std::string details = std::to_string(maps) + " P5 maps valid: " +
                              (all_valid ? "yes" : "NO") +
                              "; exported bytes match the attention slices: " +
                              (bytes_match ? "yes" : "NO") +
                              "; true-class attention mass peaks in the true quadrant on " +
                              std::to_string(hits) + "/8 clean samples";
  report(10, pass, details);
  EXPECT_TRUE(pass) << details;
}

}  // namespace
}  // namespace noah

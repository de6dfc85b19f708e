#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "noah/data.hpp"
#include "noah/error.hpp"
#include "noah/heads.hpp"
#include "noah/kv.hpp"
#include "noah/model.hpp"
#include "noah/pgm.hpp"
#include "noah/rng.hpp"
#include "noah/tensor.hpp"
#include "noah/train.hpp"

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& text) {
  const auto begin = text.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = text.find_last_not_of(" \t\r");
  return text.substr(begin, end - begin + 1);
}

// Config precedence: file, then --set in order, then --seed.
noah::KvMap build_config(const std::string& config_path, const std::vector<std::string>& sets,
                         const std::string& seed_text) {
  noah::KvMap map;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      throw noah::ConfigError("config file '" + config_path + "' cannot be opened");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    try {
      map = noah::parse_kv_text(buffer.str());
    } catch (const noah::FormatError& e) {
      throw noah::ConfigError("config file '" + config_path + "': " + e.what());
    }
  }
  for (const std::string& pair : sets) {
    const auto eq = pair.find('=');
    if (eq == std::string::npos || trim(pair.substr(0, eq)).empty()) {
      throw noah::ConfigError("--set expects KEY=VALUE, got '" + pair + "'");
    }
    map[trim(pair.substr(0, eq))] = trim(pair.substr(eq + 1));
  }
  if (!seed_text.empty()) {
    map["seed"] = std::to_string(noah::parse_u64(seed_text, "--seed"));
  }
  return map;
}

fs::path require_out(const std::string& out_dir, const char* command) {
  if (out_dir.empty()) {
    throw noah::ConfigError(std::string(command) + " needs --out DIR");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw noah::IoError("cannot create output directory '" + out_dir + "': " + ec.message());
  }
  return fs::path(out_dir);
}

std::string fixed6(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.6f", value);
  return buffer;
}

// Separate sub-streams so the train/eval splits never share samples.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;

noah::QuadrantSpec read_quadrant_spec(noah::KvReader& reader) {
  noah::QuadrantSpec spec;
  spec.image_size = reader.take_int("data.image_size", spec.image_size);
  spec.glyphs = reader.take_int("data.glyphs", spec.glyphs);
  spec.noise = static_cast<float>(reader.take_double("data.noise", spec.noise));
  spec.jitter = reader.take_int("data.jitter", spec.jitter);
  spec.seed = reader.take_u64("data.seed", spec.seed);
  return spec;
}

noah::LabeledBatch quadrant_split(noah::QuadrantSpec spec, std::uint64_t stream, int count) {
  spec.seed = noah::mix_seed(spec.seed, stream);
  return noah::gen_quadrant(spec, count);
}

noah::LabeledBatch load_idx_pair(noah::KvReader& reader, const char* images_key,
                                 const char* labels_key) {
  const std::string images = reader.take_string(images_key, "");
  const std::string labels = reader.take_string(labels_key, "");
  if (images.empty() || labels.empty()) {
    throw noah::ConfigError(std::string("idx data needs both ") + images_key + " and " +
                            labels_key);
  }
  return noah::load_idx(images, labels);
}

// Mark train-only keys consumed so one config file can drive every
// subcommand; eval and viz take the model from the checkpoint instead.
void consume_train_keys(noah::KvReader& reader, bool include_batch_size) {
  noah::read_model_config(reader);
  for (const char* key : {"epochs", "learning_rate", "momentum", "weight_decay", "seed",
                          "data.train_count", "data.train_images", "data.train_labels"}) {
    reader.take(key);
  }
  if (include_batch_size) reader.take("batch_size");
}

int run_train(const noah::KvMap& map, const std::string& out_dir) {
  const fs::path dir = require_out(out_dir, "train");
  noah::KvReader reader(map);

  noah::TrainConfig config;
  config.model = noah::read_model_config(reader);
  config.epochs = reader.take_int("epochs", config.epochs);
  config.batch_size = reader.take_int("batch_size", config.batch_size);
  config.learning_rate = static_cast<float>(reader.take_double("learning_rate", config.learning_rate));
  config.momentum = static_cast<float>(reader.take_double("momentum", config.momentum));
  config.weight_decay = static_cast<float>(reader.take_double("weight_decay", config.weight_decay));
  config.seed = reader.take_u64("seed", config.seed);

  noah::LabeledBatch train_data;
  noah::LabeledBatch eval_data;
  const std::string source = reader.take_string("data.source", "quadrant");
  if (source == "quadrant") {
    const noah::QuadrantSpec spec = read_quadrant_spec(reader);
    const int train_count = reader.take_int("data.train_count", 4000);
    const int eval_count = reader.take_int("data.eval_count", 800);
    if (config.model.categories == 0) config.model.categories = noah::quadrant_classes(spec);
    train_data = quadrant_split(spec, kTrainStream, train_count);
    eval_data = quadrant_split(spec, kEvalStream, eval_count);
  } else if (source == "idx") {
    train_data = load_idx_pair(reader, "data.train_images", "data.train_labels");
    eval_data = load_idx_pair(reader, "data.eval_images", "data.eval_labels");
  } else {
    throw noah::ConfigError("data.source must be quadrant or idx, got '" + source + "'");
  }
  reader.finish("train config");

  const noah::TrainResult result = noah::train(config, train_data, eval_data);

  const fs::path checkpoint = dir / "checkpoint.noah";
  const fs::path metrics = dir / "metrics.csv";
  noah::save_checkpoint(result.model, checkpoint.string());
  {
    std::ofstream out(metrics);
    if (!out) throw noah::IoError("cannot open '" + metrics.string() + "' for writing");
    out << noah::metrics_csv(result.log);
  }

  const noah::EpochStats& last = result.log.back();
  std::cout << "checkpoint=" << checkpoint.string() << "\n";
  std::cout << "metrics=" << metrics.string() << "\n";
  std::cout << "final_train_loss=" << fixed6(last.train_loss) << "\n";
  std::cout << "final_train_top1=" << fixed6(last.train_top1) << "\n";
  std::cout << "final_eval_top1=" << fixed6(last.eval_top1) << "\n";
  return 0;
}

int run_eval(const noah::KvMap& map, const std::string& out_dir) {
  noah::KvReader reader(map);
  const std::string fallback =
      out_dir.empty() ? "checkpoint.noah" : (fs::path(out_dir) / "checkpoint.noah").string();
  const std::string checkpoint = reader.take_string("checkpoint", fallback);
  const int batch_size = reader.take_int("batch_size", 32);
  consume_train_keys(reader, false);

  noah::LabeledBatch data;
  const std::string source = reader.take_string("data.source", "quadrant");
  if (source == "quadrant") {
    const noah::QuadrantSpec spec = read_quadrant_spec(reader);
    const int eval_count = reader.take_int("data.eval_count", 800);
    data = quadrant_split(spec, kEvalStream, eval_count);
  } else if (source == "idx") {
    data = load_idx_pair(reader, "data.eval_images", "data.eval_labels");
  } else {
    throw noah::ConfigError("data.source must be quadrant or idx, got '" + source + "'");
  }
  reader.finish("eval config");

  const noah::Model model = noah::load_checkpoint(checkpoint);
  const noah::EvalResult result = noah::evaluate(model, data, batch_size);
  std::cout << "eval_top1=" << fixed6(result.top1) << "\n";
  if (result.top5) std::cout << "eval_top5=" << fixed6(*result.top5) << "\n";
  return 0;
}

void print_cost(const std::string& prefix, const noah::CostReport& report) {
  std::cout << prefix << "_params=" << report.params << "\n";
  std::cout << prefix << "_madds=" << report.madds << "\n";
  for (const noah::CostLine& line : report.breakdown) {
    std::cout << prefix << "_" << line.stage << "_params=" << line.params << "\n";
    std::cout << prefix << "_" << line.stage << "_madds=" << line.madds << "\n";
  }
}

int run_cost(const noah::KvMap& map) {
  noah::KvReader reader(map);
  noah::NoahConfig config;
  const int channels = reader.take_int("c", 2048);
  const int height = reader.take_int("h", 7);
  const int width = reader.take_int("w", 7);
  config.categories = reader.take_int("m", 1000);
  config.groups = reader.take_int("n", 4);
  config.key_ratio = reader.take_double("r", 0.125);
  config.use_bias = reader.take_bool("bias", false);
  reader.take("seed");
  reader.finish("cost config");

  print_cost("noah", noah::count_cost(config, channels, height, width));
  print_cost("gap",
             noah::count_gap_cost(channels, config.categories, height, width, config.use_bias));
  return 0;
}

std::uint64_t fnv1a_floats(std::span<const float> values) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (float value : values) {
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    for (int i = 0; i < 4; ++i) {
      hash ^= (bits >> (8 * i)) & 0xffu;
      hash *= 1099511628211ULL;
    }
  }
  return hash;
}

struct BenchStats {
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double min_ms = 0.0;
  double fps = 0.0;
  std::uint64_t checksum = 0;
};

template <typename Forward>
BenchStats run_case(int warmup, int repeats, int batch, Forward&& forward) {
  for (int i = 0; i < warmup; ++i) forward();
  std::vector<double> ms(repeats);
  BenchStats stats;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const noah::Matrix logits = forward();
    const auto t1 = std::chrono::steady_clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    stats.checksum = fnv1a_floats(logits.values());
  }
  std::sort(ms.begin(), ms.end());
  stats.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / repeats;
  stats.median_ms = repeats % 2 ? ms[repeats / 2] : 0.5 * (ms[repeats / 2 - 1] + ms[repeats / 2]);
  stats.min_ms = ms.front();
  stats.fps = batch / (stats.median_ms / 1000.0);
  return stats;
}

int run_bench(const noah::KvMap& map, const std::string& out_dir) {
  const fs::path dir = require_out(out_dir, "bench");
  noah::KvReader reader(map);
  const int channels = reader.take_int("c", 512);
  const int height = reader.take_int("h", 7);
  const int width = reader.take_int("w", 7);
  const int categories = reader.take_int("m", 100);
  const int batch = reader.take_int("b", 32);
  const int repeats = reader.take_int("repeats", 30);
  const int warmup = reader.take_int("warmup", 5);
  noah::NoahConfig noah_config;
  noah_config.groups = reader.take_int("n", 4);
  noah_config.key_ratio = reader.take_double("r", 0.5);
  noah_config.categories = categories;
  const std::uint64_t seed = reader.take_u64("seed", 0);
  reader.finish("bench config");
  if (repeats < 1) {
    throw noah::ConfigError("repeats must be at least 1, got " + std::to_string(repeats));
  }
  if (warmup < 0) {
    throw noah::ConfigError("warmup cannot be negative, got " + std::to_string(warmup));
  }

  noah::Rng rng(noah::mix_seed(seed, 7));
  noah::Tensor input(batch, height, width, channels);
  for (float& value : input.values()) value = rng.uniform_float(0.0f, 1.0f);

  const noah::NoahHeadParams noah_head = noah::init_noah(noah_config, channels, noah::mix_seed(seed, 8));
  const noah::GapHeadParams gap_head =
      noah::init_gap(channels, categories, false, noah::mix_seed(seed, 9));

  // End to end adds one pointwise backbone layer of matching width in front of
  // each head.
  noah::ModelConfig model_config;
  model_config.categories = categories;
  model_config.input_channels = channels;
  model_config.gap_bias = false;
  model_config.noah = noah_config;
  model_config.backbone.kind = noah::BackboneKind::Pointwise;
  model_config.backbone.widths = {channels};
  model_config.head = noah::HeadKind::Noah;
  const noah::Model noah_model = noah::init_model(model_config, seed + 1);
  model_config.head = noah::HeadKind::Gap;
  const noah::Model gap_model = noah::init_model(model_config, seed + 1);

  struct Row {
    const char* head;
    const char* scope;
    BenchStats stats;
  };
  std::vector<Row> rows;
  rows.push_back({"noah", "isolated",
                  run_case(warmup, repeats, batch,
                           [&] { return noah::noah_forward(input, noah_head); })});
  rows.push_back({"gap", "isolated",
                  run_case(warmup, repeats, batch,
                           [&] { return noah::gap_forward(input, gap_head); })});
  rows.push_back({"noah", "end_to_end",
                  run_case(warmup, repeats, batch,
                           [&] { return noah::model_forward(noah_model, input); })});
  rows.push_back({"gap", "end_to_end",
                  run_case(warmup, repeats, batch,
                           [&] { return noah::model_forward(gap_model, input); })});

  const fs::path csv_path = dir / "bench.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw noah::IoError("cannot open '" + csv_path.string() + "' for writing");
  csv << "head,scope,channels,height,width,categories,batch,repeats,warmup,"
         "mean_ms,median_ms,min_ms,fps,checksum\n";
  char line[256];
  for (const Row& row : rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%d,%d,%d,%d,%d,%d,%d,%.6f,%.6f,%.6f,%.3f,%llu\n",
                  row.head, row.scope, channels, height, width, categories, batch, repeats,
                  warmup, row.stats.mean_ms, row.stats.median_ms, row.stats.min_ms, row.stats.fps,
                  static_cast<unsigned long long>(row.stats.checksum));
    csv << line;
    std::snprintf(line, sizeof(line),
                  "%s %s: mean_ms=%.6f median_ms=%.6f min_ms=%.6f fps=%.3f checksum=%llu\n",
                  row.head, row.scope, row.stats.mean_ms, row.stats.median_ms, row.stats.min_ms,
                  row.stats.fps, static_cast<unsigned long long>(row.stats.checksum));
    std::cout << line;
  }
  const double isolated =
      (rows[0].stats.median_ms - rows[1].stats.median_ms) / rows[1].stats.median_ms * 100.0;
  const double end_to_end =
      (rows[2].stats.median_ms - rows[3].stats.median_ms) / rows[3].stats.median_ms * 100.0;
  std::cout << "overhead_percent_isolated=" << fixed6(isolated) << "\n";
  std::cout << "overhead_percent_end_to_end=" << fixed6(end_to_end) << "\n";
  std::cout << "overhead_percent=" << fixed6(end_to_end) << "\n";
  std::cout << "csv=" << csv_path.string() << "\n";
  return 0;
}

int run_viz(const noah::KvMap& map, const std::string& out_dir) {
  const fs::path dir = require_out(out_dir, "viz");
  noah::KvReader reader(map);
  const std::string checkpoint =
      reader.take_string("checkpoint", (fs::path(out_dir) / "checkpoint.noah").string());
  const int samples = reader.take_int("viz.samples", 1);
  std::vector<int> blocks = reader.take_int_list("viz.blocks", {});
  std::vector<int> categories = reader.take_int_list("viz.categories", {});
  const noah::QuadrantSpec spec = read_quadrant_spec(reader);
  const std::string source = reader.take_string("data.source", "quadrant");
  if (source != "quadrant") {
    throw noah::ConfigError("viz renders quadrant samples only, got data.source=" + source);
  }
  reader.take("data.eval_count");
  consume_train_keys(reader, true);
  reader.finish("viz config");

  if (samples < 1) {
    throw noah::ConfigError("viz.samples must be at least 1, got " + std::to_string(samples));
  }
  const noah::Model model = noah::load_checkpoint(checkpoint);
  if (model.config.head != noah::HeadKind::Noah) {
    throw noah::ConfigError("viz needs a noah-head checkpoint; this one uses the gap head");
  }
  const int total_blocks = model.config.noah.groups;
  const int total_categories = model.config.categories;
  if (blocks.empty()) {
    blocks.resize(total_blocks);
    std::iota(blocks.begin(), blocks.end(), 0);
  }
  if (categories.empty()) {
    categories.resize(total_categories);
    std::iota(categories.begin(), categories.end(), 0);
  }
  for (int n : blocks) {
    if (n < 0 || n >= total_blocks) {
      throw noah::ConfigError("block index " + std::to_string(n) + " out of range for " +
                              std::to_string(total_blocks) + " blocks");
    }
  }
  for (int m : categories) {
    if (m < 0 || m >= total_categories) {
      throw noah::ConfigError("category index " + std::to_string(m) + " out of range for " +
                              std::to_string(total_categories) + " categories");
    }
  }

  const noah::LabeledBatch data = noah::gen_quadrant(spec, samples);
  const bool shared = model.config.noah.shared_single_attention;
  int written = 0;
  for (int s = 0; s < samples; ++s) {
    noah::Tensor image(1, data.images.height(), data.images.width(), data.images.channels());
    std::copy_n(data.images.values().data() + data.images.pixel_offset(s, 0, 0),
                image.values().size(), image.values().data());

    noah::ModelCache cache;
    noah::model_forward(model, image, &cache);
    const noah::NoahCache& head = cache.noah;
    const int h = head.value[0].height();
    const int w = head.value[0].width();

    std::vector<float> plane(static_cast<std::size_t>(h) * w);
    for (int n : blocks) {
      for (int m : categories) {
        const int channel = shared ? 0 : m;
        for (int i = 0; i < h; ++i) {
          for (int j = 0; j < w; ++j) {
            plane[static_cast<std::size_t>(i) * w + j] = head.attention[n].at(0, i, j, channel);
          }
        }
        char name[96];
        std::snprintf(name, sizeof(name), "sample%d_block%d_cat%d_attention.pgm", s, n, m);
        noah::write_pgm((dir / name).string(), w, h, noah::quantize_unit_range(plane));
        ++written;
      }
    }
    for (int m : categories) {
      const int channel = shared ? 0 : m;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          double acc = 0.0;
          for (int n = 0; n < total_blocks; ++n) {
            acc += static_cast<double>(head.attention[n].at(0, i, j, channel) *
                                       head.value[n].at(0, i, j, m));
          }
          plane[static_cast<std::size_t>(i) * w + j] = static_cast<float>(acc);
        }
      }
      char name[96];
      std::snprintf(name, sizeof(name), "sample%d_cat%d_poca.pgm", s, m);
      noah::write_pgm((dir / name).string(), w, h, noah::quantize_symmetric_range(plane));
      ++written;
    }
    std::cout << "sample=" << s << " label=" << data.labels[s] << "\n";
  }
  std::cout << "files=" << written << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NOAH classification head toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string seed_text;
  std::vector<std::string> sets;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat key=value config file");
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed_text, "override the seed key");
    cmd->add_option("--set", sets, "override KEY=VALUE, repeatable");
  };
  CLI::App* train_cmd = app.add_subcommand("train", "train a model, write checkpoint and metrics");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  CLI::App* cost_cmd = app.add_subcommand("cost", "parameter and multiply-add accounting");
  CLI::App* bench_cmd = app.add_subcommand("bench", "forward latency, noah vs gap");
  CLI::App* viz_cmd = app.add_subcommand("viz", "export attention and poca maps as pgm");
  for (CLI::App* cmd : {train_cmd, eval_cmd, cost_cmd, bench_cmd, viz_cmd}) add_common(cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const noah::KvMap map = build_config(config_path, sets, seed_text);
    if (*train_cmd) return run_train(map, out_dir);
    if (*eval_cmd) return run_eval(map, out_dir);
    if (*cost_cmd) return run_cost(map);
    if (*bench_cmd) return run_bench(map, out_dir);
    return run_viz(map, out_dir);
  } catch (const noah::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const noah::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

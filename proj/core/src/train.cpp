#include "noah/train.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "noah/error.hpp"

namespace noah {

namespace {

// Argmax with ties resolved to the lowest index.
int argmax_row(const Matrix& m, int row) {
  int best = 0;
  for (int c = 1; c < m.cols(); ++c) {
    if (m.at(row, c) > m.at(row, best)) best = c;
  }
  return best;
}

bool label_in_top5(const Matrix& probs, int row, int label) {
  // Rank by probability, ties to the lower index; label must land in the
  // first five ranks.
  int better = 0;
  for (int c = 0; c < probs.cols(); ++c) {
    if (c == label) continue;
    if (probs.at(row, c) > probs.at(row, label) ||
        (probs.at(row, c) == probs.at(row, label) && c < label)) {
      ++better;
    }
  }
  return better < 5;
}

Tensor slice_images(const Tensor& images, int start, int count) {
  Tensor out(count, images.height(), images.width(), images.channels());
  const std::size_t row =
      static_cast<std::size_t>(images.height()) * images.width() * images.channels();
  std::copy_n(images.values().data() + static_cast<std::size_t>(start) * row, count * row,
              out.values().data());
  return out;
}

void validate_batch(const LabeledBatch& data, int categories, const char* which) {
  if (static_cast<int>(data.labels.size()) != data.images.batch()) {
    throw ShapeError(std::string(which) + " set: " + std::to_string(data.images.batch()) +
                     " images but " + std::to_string(data.labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (data.labels[i] < 0 || data.labels[i] >= categories) {
      throw DataError(std::string(which) + " set: label " + std::to_string(data.labels[i]) +
                      " at index " + std::to_string(i) + " out of range for " +
                      std::to_string(categories) + " categories");
    }
  }
}

}  // namespace

CrossEntropyResult cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<int>(labels.size()) != logits.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(logits.rows()) + " logit rows vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const int m = logits.cols();
  CrossEntropyResult result{0.0, Matrix(logits.rows(), m)};
  const double inv_batch = 1.0 / logits.rows();
  for (int r = 0; r < logits.rows(); ++r) {
    const int label = labels[r];
    if (label < 0 || label >= m) {
      throw DataError("cross_entropy: label " + std::to_string(label) +
                      " out of range for " + std::to_string(m) + " categories");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < m; ++c) mx = std::max(mx, static_cast<double>(logits.at(r, c)));
    double sum = 0.0;
    for (int c = 0; c < m; ++c) sum += std::exp(logits.at(r, c) - mx);
    const double lse = mx + std::log(sum);
    result.loss += (lse - logits.at(r, label)) * inv_batch;
    for (int c = 0; c < m; ++c) {
      const double softmax = std::exp(logits.at(r, c) - lse);
      const double one_hot = c == label ? 1.0 : 0.0;
      result.grad_logits.at(r, c) = static_cast<float>((softmax - one_hot) * inv_batch);
    }
  }
  return result;
}

void sgd_step(std::span<ParamSlot> params, const GradientSet& grads, SgdState& state,
              const SgdConfig& sgd) {
  for (ParamSlot& param : params) {
    const GradientSet::Entry& grad = grads.at(param.path);
    if (grad.extents != param.extents || grad.values.size() != param.values.size()) {
      throw ShapeError("sgd_step: gradient for '" + param.path +
                       "' does not match the parameter extents");
    }
    std::vector<float>& velocity = state.velocity[param.path];
    if (velocity.empty()) velocity.assign(param.values.size(), 0.0f);
    if (velocity.size() != param.values.size()) {
      throw ShapeError("sgd_step: stale velocity for '" + param.path + "'");
    }
    for (std::size_t i = 0; i < param.values.size(); ++i) {
      const double v = static_cast<double>(sgd.momentum) * velocity[i] + grad.values[i] +
                       static_cast<double>(sgd.weight_decay) * param.values[i];
      velocity[i] = static_cast<float>(v);
      param.values[i] = static_cast<float>(param.values[i] - static_cast<double>(sgd.learning_rate) * v);
    }
  }
}

TrainResult train(const TrainConfig& config, const LabeledBatch& train_data,
                  const LabeledBatch& eval_data) {
  if (config.epochs < 1) {
    throw ConfigError("epochs must be at least 1, got " + std::to_string(config.epochs));
  }
  if (config.batch_size < 1) {
    throw ConfigError("batch size must be at least 1, got " + std::to_string(config.batch_size));
  }

  TrainResult result;
  result.model = init_model(config.model, config.seed);

  // Everything that could abort must do so before the first step.
  validate_batch(train_data, config.model.categories, "train");
  validate_batch(eval_data, config.model.categories, "eval");
  if (train_data.images.channels() != config.model.input_channels ||
      eval_data.images.channels() != config.model.input_channels) {
    throw ShapeError("model expects " + std::to_string(config.model.input_channels) +
                     " image channels but the data disagrees");
  }

  const SgdConfig sgd{config.learning_rate, config.momentum, config.weight_decay};
  SgdState state;
  std::vector<ParamSlot> params = list_params_mutable(result.model);

  const int n = train_data.images.batch();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    long long hits = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int count = std::min(config.batch_size, n - start);
      const Tensor images = slice_images(train_data.images, start, count);
      const std::span<const int> labels(train_data.labels.data() + start,
                                        static_cast<std::size_t>(count));

      ModelCache cache;
      const Matrix logits = model_forward(result.model, images, &cache);
      const CrossEntropyResult ce = cross_entropy(logits, labels);
      const GradientSet grads = model_backward(result.model, cache, ce.grad_logits);
      sgd_step(params, grads, state, sgd);

      loss_sum += ce.loss * count;
      for (int r = 0; r < count; ++r) {
        if (argmax_row(logits, r) == labels[r]) ++hits;
      }
    }
    const EvalResult eval = evaluate(result.model, eval_data, config.batch_size);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t0;
    result.log.push_back(EpochStats{epoch, loss_sum / n, static_cast<double>(hits) / n,
                                    eval.top1, elapsed.count()});
  }
  return result;
}

std::string metrics_csv(std::span<const EpochStats> log) {
  std::string out = "epoch,train_loss,train_top1,eval_top1,seconds\n";
  char row[160];
  for (const EpochStats& stats : log) {
    std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f,%.3f\n", stats.epoch, stats.train_loss,
                  stats.train_top1, stats.eval_top1, stats.seconds);
    out += row;
  }
  return out;
}

EvalResult eval_logits(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<int>(labels.size()) != logits.rows()) {
    throw ShapeError("eval: " + std::to_string(logits.rows()) + " logit rows vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const Matrix probs = classify(logits);
  long long top1_hits = 0;
  long long top5_hits = 0;
  for (int r = 0; r < probs.rows(); ++r) {
    if (argmax_row(probs, r) == labels[r]) ++top1_hits;
    if (probs.cols() >= 5 && label_in_top5(probs, r, labels[r])) ++top5_hits;
  }
  EvalResult result;
  result.top1 = static_cast<double>(top1_hits) / probs.rows();
  if (probs.cols() >= 5) {
    result.top5 = static_cast<double>(top5_hits) / probs.rows();
  }
  return result;
}

EvalResult evaluate(const Model& model, const LabeledBatch& data, int batch_size) {
  if (batch_size < 1) {
    throw ConfigError("batch size must be at least 1, got " + std::to_string(batch_size));
  }
  validate_batch(data, model.config.categories, "eval");

  const int n = data.images.batch();
  long long top1_hits = 0;
  long long top5_hits = 0;
  const bool track_top5 = model.config.categories >= 5;
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    const Tensor images = slice_images(data.images, start, count);
    const Matrix probs = classify(model_forward(model, images));
    for (int r = 0; r < count; ++r) {
      const int label = data.labels[start + r];
      if (argmax_row(probs, r) == label) ++top1_hits;
      if (track_top5 && label_in_top5(probs, r, label)) ++top5_hits;
    }
  }
  EvalResult result;
  result.top1 = static_cast<double>(top1_hits) / n;
  if (track_top5) result.top5 = static_cast<double>(top5_hits) / n;
  return result;
}

// --- checkpoint format -----------------------------------------------------
//
//   "NOAH"                       4 bytes
//   version                      u32 little-endian (currently 1)
//   config text length, bytes    u32 + UTF-8 key=value block
//   parameter count              u32
//   per parameter: name (u32 length + bytes), rank u32, extents u32 each,
//                  values as little-endian 32-bit floats
//   FNV-1a 64 hash of all preceding bytes, u64 little-endian

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kMagic[4] = {'N', 'O', 'A', 'H'};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (std::uint8_t b : bytes) {
    hash ^= b;
    hash *= 1099511628211ULL;
  }
  return hash;
}

// Sequential reader that throws IoError as soon as a field would run past the
// end, which is what distinguishes a truncated file from a corrupted one.
class ByteCursor {
 public:
  explicit ByteCursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t read_u32() {
    require(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t read_u64() {
    require(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::span<const std::uint8_t> read_bytes(std::size_t count) {
    require(count);
    const auto view = bytes_.subspan(pos_, count);
    pos_ += count;
    return view;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void require(std::size_t count) const {
    if (bytes_.size() - pos_ < count) {
      throw IoError("truncated checkpoint: needed " + std::to_string(count) +
                    " more bytes at offset " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> checkpoint_bytes(const Model& model) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  append_u32(out, kCheckpointVersion);

  const std::string config = serialize_kv(model_config_to_kv(model.config));
  append_u32(out, static_cast<std::uint32_t>(config.size()));
  out.insert(out.end(), config.begin(), config.end());

  const std::vector<ParamView> params = list_params(model);
  append_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const ParamView& param : params) {
    append_u32(out, static_cast<std::uint32_t>(param.path.size()));
    out.insert(out.end(), param.path.begin(), param.path.end());
    append_u32(out, static_cast<std::uint32_t>(param.extents.size()));
    for (int e : param.extents) append_u32(out, static_cast<std::uint32_t>(e));
    for (float v : param.values) append_u32(out, std::bit_cast<std::uint32_t>(v));
  }

  append_u64(out, fnv1a({out.data(), out.size()}));
  return out;
}

Model model_from_checkpoint_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint: missing NOAH magic");
  }
  ByteCursor cursor(bytes);
  cursor.read_bytes(4);  // magic

  const std::uint32_t version = cursor.read_u32();
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) +
                    " (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  const std::uint32_t config_len = cursor.read_u32();
  const auto config_view = cursor.read_bytes(config_len);
  const std::string config_text(config_view.begin(), config_view.end());

  struct StoredParam {
    std::string name;
    std::vector<int> extents;
    std::span<const std::uint8_t> payload;
  };
  std::vector<StoredParam> stored(cursor.read_u32());
  for (StoredParam& param : stored) {
    const std::uint32_t name_len = cursor.read_u32();
    const auto name_view = cursor.read_bytes(name_len);
    param.name.assign(name_view.begin(), name_view.end());
    const std::uint32_t rank = cursor.read_u32();
    if (rank > 4) {
      throw FormatError("checkpoint parameter '" + param.name + "' has rank " +
                        std::to_string(rank));
    }
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t extent = cursor.read_u32();
      if (extent == 0 || extent > (1u << 24)) {
        throw FormatError("checkpoint parameter '" + param.name + "' has extent " +
                          std::to_string(extent));
      }
      param.extents.push_back(static_cast<int>(extent));
      count *= extent;
    }
    param.payload = cursor.read_bytes(count * 4);
  }

  if (cursor.remaining() < 8) {
    throw IoError("truncated checkpoint: the trailing checksum is incomplete");
  }
  if (cursor.remaining() > 8) {
    throw FormatError("checkpoint has " + std::to_string(cursor.remaining() - 8) +
                      " trailing bytes");
  }
  const std::uint64_t expected_hash = fnv1a(bytes.first(cursor.position()));
  if (cursor.read_u64() != expected_hash) {
    throw FormatError("checkpoint checksum mismatch: the payload is corrupted");
  }

  const ModelConfig config = model_config_from_kv(parse_kv_text(config_text));
  Model model = init_model(config, 0);
  std::vector<ParamSlot> slots = list_params_mutable(model);
  if (slots.size() != stored.size()) {
    throw FormatError("checkpoint holds " + std::to_string(stored.size()) +
                      " parameters but the config describes " + std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (stored[i].name != slots[i].path) {
      throw FormatError("checkpoint parameter '" + stored[i].name + "' where '" +
                        slots[i].path + "' was expected");
    }
    if (stored[i].extents != slots[i].extents) {
      throw FormatError("checkpoint parameter '" + stored[i].name +
                        "' extents do not match the config");
    }
    for (std::size_t v = 0; v < slots[i].values.size(); ++v) {
      std::uint32_t bits = 0;
      for (int byte = 0; byte < 4; ++byte) {
        bits |= static_cast<std::uint32_t>(stored[i].payload[v * 4 + byte]) << (8 * byte);
      }
      slots[i].values[v] = std::bit_cast<float>(bits);
    }
  }
  return model;
}

void save_checkpoint(const Model& model, const std::string& path) {
  const std::vector<std::uint8_t> bytes = checkpoint_bytes(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed while writing '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return model_from_checkpoint_bytes(bytes);
}

}  // namespace noah

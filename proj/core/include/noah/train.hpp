#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "noah/data.hpp"
#include "noah/model.hpp"

namespace noah {

struct CrossEntropyResult {
  double loss;        // mean negative log-likelihood over the batch
  Matrix grad_logits; // (softmax - one_hot) / batch
};
// Stable log-sum-exp cross entropy. Throws DataError when a label falls
// outside [0, M).
CrossEntropyResult cross_entropy(const Matrix& logits, std::span<const int> labels);

struct SgdConfig {
  float learning_rate = 0.05f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
};

// Velocity per parameter path, created lazily at zero.
struct SgdState {
  std::map<std::string, std::vector<float>> velocity;
};

// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
// Every parameter must have a matching gradient entry of identical extents.
void sgd_step(std::span<ParamSlot> params, const GradientSet& grads, SgdState& state,
              const SgdConfig& sgd);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  float learning_rate = 0.05f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  std::uint64_t seed = 1;
  ModelConfig model;
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_top1 = 0.0;
  double eval_top1 = 0.0;
  double seconds = 0.0;  // wall time, the one non-deterministic column
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> log;
};

// Full-batch-schedule SGD training: fixed batch order (generation order), one
// eval pass per epoch. All label values are validated against the category
// count before the first step. Apart from the wall-time column of the log,
// the result is bitwise deterministic for a fixed config and seed.
TrainResult train(const TrainConfig& config, const LabeledBatch& train_data,
                  const LabeledBatch& eval_data);

// "epoch,train_loss,train_top1,eval_top1,seconds" rows with a header.
std::string metrics_csv(std::span<const EpochStats> log);

struct EvalResult {
  double top1 = 0.0;
  std::optional<double> top5;  // present when the model has at least 5 classes
};
// Argmax of classify(logits) against labels; ties resolve to the lowest
// category index.
EvalResult evaluate(const Model& model, const LabeledBatch& data, int batch_size);
EvalResult eval_logits(const Matrix& logits, std::span<const int> labels);

// Binary checkpoint: "NOAH" magic, format version, the model config as a
// key=value block, every parameter array with its extents (little-endian
// 32-bit values), and a trailing content hash. Round-trips bit-exactly; bad
// magic, version mismatch, truncation, and payload corruption all fail loudly
// as distinct errors.
std::vector<std::uint8_t> checkpoint_bytes(const Model& model);
Model model_from_checkpoint_bytes(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace noah

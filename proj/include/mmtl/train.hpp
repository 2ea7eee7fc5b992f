#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmtl/data.hpp"
#include "mmtl/model.hpp"

namespace mmtl {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  float base_lr = 0.001f;
  float lr_decay_factor = 0.1f;
  int lr_decay_every = 10;
  int batch_size = 32;
  float weight_decay = 0.0005f;
  int epochs = 50;
  int fine_tune_epochs = 30;
  int early_stop_patience = 5;
  int seed = 0;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-8f;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct OptimizerState {
  NamedTensors m, v;
  long step = 0;
};

struct EpochRecord {
  int epoch = 0;
  float train_total = 0, train_activity = 0, train_resistance = 0;
  float val_loss = 0, val_accuracy = 0, val_mae = 0;
  float lr = 0;
  double seconds = 0;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

using TrainHistory = std::vector<EpochRecord>;

struct Checkpoint {
  ModelConfig config;
  TrainConfig train_config;
  ModelParams params;
  OptimizerState opt;
  int epoch = 0;
  TrainHistory history;
};

float lr_at(int epoch, const TrainConfig& cfg);

// One Adam update with decoupled weight decay; biases and BN gamma/beta are
// exempt from decay, running statistics are untouched.
void adam_step(ModelParams& params, const NamedTensors& grads, OptimizerState& state, float lr,
               const TrainConfig& cfg);

OptimizerState init_optimizer(const ModelParams& params);

struct EvalStats {
  float loss = 0, accuracy = 0, mae = 0;
};
EvalStats evaluate(const std::vector<LabeledWindow>& set, ModelParams& params,
                   const ModelConfig& cfg, int batch_size = 64);

struct TrainResult {
  Checkpoint checkpoint;
  TrainHistory history;
};

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<LabeledWindow>& train_set,
                  const std::vector<LabeledWindow>& val_set,
                  const Checkpoint* resume = nullptr);

// Copies the backbone, reinitializes the activity head when the class count
// changes, then runs the normal loop for fine_tune_epochs.
TrainResult fine_tune(const Checkpoint& source, const ModelConfig& new_cfg,
                      const TrainConfig& train_cfg, const std::vector<LabeledWindow>& train_set,
                      const std::vector<LabeledWindow>& val_set);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mmtl

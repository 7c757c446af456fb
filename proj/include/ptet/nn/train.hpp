#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace ptet::nn {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string optimizer = "adamw";  // adamw | adam
  double lr = 1.5e-4;
  // Effective rate is lr * batch_size / 256 when set.
  bool scale_lr_by_batch = false;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  std::string scheduler = "cosine";  // cosine | plateau | constant
  double reduce_factor = 0.5;
  int reduce_patience = 10;
  int warmup_epochs = 200;
  int epochs = 2000;
  int early_stopping_patience = 200;
  int batch_size = 64;
  double min_lr = 0.0;
  double grad_clip = 0.0;  // 0 disables
  std::uint64_t seed = 0;

  double base_lr() const { return scale_lr_by_batch ? lr * batch_size / 256.0 : lr; }
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep `defaults`; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& defaults);
  static TrainConfig from_json(const nlohmann::json& j);

  static TrainConfig voltage_pretraining();
  static TrainConfig tactile_pretraining();
  static TrainConfig finetuning();
};

// Linear warmup over warmup_epochs, then half-cosine from base to min_lr.
// Evaluated per step with fractional epochs.
class CosineSchedule {
 public:
  CosineSchedule(double base, double min_lr, int warmup_epochs, int total_epochs);
  double at(double epoch) const;

 private:
  double base_, min_, warmup_, total_;
};

// Halves (by factor) the rate after `patience` epochs without improvement.
class PlateauSchedule {
 public:
  PlateauSchedule(double base, double factor, int patience, double min_lr = 0.0, double threshold = 1e-4);
  // Returns the rate to use for the next epoch.
  double step(double metric);
  double lr() const { return lr_; }

  nlohmann::json state() const;
  void restore(const nlohmann::json& s);

 private:
  double lr_, factor_, min_, threshold_;
  int patience_;
  double best_;
  int bad_ = 0;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  // True when training should stop.
  bool update(double metric);
  bool improved() const { return bad_ == 0; }
  double best() const { return best_; }

  nlohmann::json state() const;
  void restore(const nlohmann::json& s);

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  nlohmann::json to_json() const;
};

// Checkpoint directory: model.pt, optimizer.pt (optional), meta.json. Writes
// go to a sibling temporary directory that is renamed into place.
void save_checkpoint(const std::filesystem::path& dir, torch::nn::Module& module, torch::optim::Optimizer* optimizer,
                     const nlohmann::json& meta);
nlohmann::json load_checkpoint(const std::filesystem::path& dir, torch::nn::Module& module,
                               torch::optim::Optimizer* optimizer = nullptr);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir);

// FNV-1a over the raw bytes of every parameter and buffer, in registration order.
std::string parameter_hash(const torch::nn::Module& module);

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const TrainConfig& cfg, std::vector<torch::Tensor> params);

struct LoopSpec {
  TrainConfig config;
  int64_t train_size = 0;
  // Mean loss over a batch of training indices; called in training mode.
  std::function<torch::Tensor(const torch::Tensor& indices, torch::Generator gen)> batch_loss;
  std::function<double()> validate;
  torch::nn::Module* module = nullptr;      // checkpointed
  std::vector<torch::Tensor> parameters;    // optimised
  std::optional<std::filesystem::path> checkpoint_dir;  // best/ and last/ live here
  nlohmann::json meta;                      // merged into checkpoint metadata
  bool resume = false;                      // continue from checkpoint_dir/last
  std::function<void(const EpochRecord&)> on_epoch;
};

// Shuffled mini-batch epochs with warmup + cosine or plateau scheduling,
// best-validation checkpointing and early stopping. Throws TrainingDiverged
// on a non-finite loss.
TrainResult run_training(LoopSpec spec);

// Deterministic per-purpose generator.
torch::Generator make_generator(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace ptet::nn

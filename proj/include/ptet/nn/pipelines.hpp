#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include <torch/torch.h>

#include "ptet/nn/data.hpp"
#include "ptet/nn/mae.hpp"
#include "ptet/nn/ptet_model.hpp"
#include "ptet/nn/tactile.hpp"
#include "ptet/nn/train.hpp"

namespace ptet::nn {

struct RunOptions {
  TrainConfig train;
  std::optional<std::filesystem::path> checkpoint_dir;
  nlohmann::json meta;
  bool resume = false;
  std::function<void(const EpochRecord&)> on_epoch;
};

TrainResult pretrain_voltage(MaskedAutoencoder& model, const InputEncoder& input, const TensorSplit& train,
                             const TensorSplit& val, const RunOptions& opt);

TrainResult pretrain_tactile(TactileAutoencoder& model, const torch::Tensor& train_maps, const torch::Tensor& val_maps,
                             const RunOptions& opt);

struct FinetuneOptions {
  RunOptions run;
  // Pixel weights [S, S] (mean 1) mixed into the loss at sensitivity_weight;
  // undefined disables the term.
  torch::Tensor pixel_weights;
  double sensitivity_weight = 0.0;
};

struct FinetuneResult {
  TrainResult train;
  std::string encoder_hash_before;
  std::string encoder_hash_after;
};

// Frozen encoder: z_v is computed once per split and only the bridge and
// decoder are optimised. Unfrozen (the supervised comparator): end to end.
FinetuneResult finetune(PtetModel& model, const InputEncoder& input, const TensorSplit& train, const TensorSplit& val,
                        const FinetuneOptions& opt);

// Builds the composed model from pretraining checkpoints with the encoder frozen.
PtetModel assemble(const std::filesystem::path& voltage_ckpt, const std::filesystem::path& tactile_ckpt,
                   double dropout, std::uint64_t seed);

// Maps for every sample of a split, [N, S, S].
torch::Tensor predict_maps(PtetModel& model, const InputEncoder& input, const TensorSplit& split,
                           int64_t batch = 256);

struct ReconstructionScore {
  double ssim = 0;  // mean over samples, data range = per-image ground-truth range
  double mse = 0;
};

// MAE reconstruction quality on held-out frames at the given mask ratio,
// with a fixed masking seed.
ReconstructionScore mae_reconstruction(MaskedAutoencoder& model, const InputEncoder& input, const TensorSplit& split,
                                       double mask_ratio, std::uint64_t seed, int64_t batch = 256);

// Column norms of the pixel Jacobian, scaled to mean 1, as [S, S].
torch::Tensor sensitivity_weights(const torch::Tensor& jacobian_pixels, int size = 48);

}  // namespace ptet::nn

#pragma once

#include <filesystem>

#include <torch/torch.h>

#include "ptet/nn/mae.hpp"
#include "ptet/nn/tactile.hpp"

namespace ptet::nn {

struct BridgeConfig {
  int input_dim = 256;
  int output_dim = 4608;
  double dropout = 0.5;

  nlohmann::json to_json() const;
  static BridgeConfig from_json(const nlohmann::json& j);
};

// Dropout on z_v, then a single affine map to the flattened tactile latent.
class BridgeImpl : public torch::nn::Module {
 public:
  explicit BridgeImpl(const BridgeConfig& cfg);
  torch::Tensor forward(const torch::Tensor& zv);

  torch::nn::Dropout dropout{nullptr};
  torch::nn::Linear linear{nullptr};
};
TORCH_MODULE(Bridge);

class PtetModelImpl : public torch::nn::Module {
 public:
  PtetModelImpl(const MaeConfig& mae, const TactileAeConfig& tactile, double dropout = 0.5);

  // E2IM batch [B, H, W] -> maps [B, S, S]. The encoder always sees every patch.
  torch::Tensor forward(const torch::Tensor& e2im);
  torch::Tensor latent(const torch::Tensor& e2im);
  torch::Tensor forward_latent(const torch::Tensor& zv);

  // Freezing disables gradients and keeps the encoder in eval mode.
  void set_encoder_frozen(bool frozen);
  bool encoder_frozen() const { return frozen_; }
  void train(bool on = true) override;

  const MaeConfig& mae_config() const { return mae_; }
  const TactileAeConfig& tactile_config() const { return tactile_; }

  MaeEncoder encoder{nullptr};
  Bridge bridge{nullptr};
  TactileDecoder decoder{nullptr};

 private:
  MaeConfig mae_;
  TactileAeConfig tactile_;
  bool frozen_ = false;
};
TORCH_MODULE(PtetModel);

// Inference with dropout disabled and no autograd.
torch::Tensor predict(PtetModel& model, const torch::Tensor& e2im);

// Parameters that will receive updates.
std::vector<torch::Tensor> trainable_parameters(const torch::nn::Module& module);

}  // namespace ptet::nn

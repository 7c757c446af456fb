#pragma once

#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace ptet::nn {

struct TactileAeConfig {
  int map_size = 48;
  std::vector<int> channels{32, 64, 128};
  int res_layers = 2;       // per stage
  int attention_dim = 128;  // 0 disables the attention layer
  int groups = 8;

  int latent_channels() const { return channels.back(); }
  int latent_size() const { return map_size >> static_cast<int>(channels.size()); }
  int64_t latent_numel() const { return int64_t{latent_channels()} * latent_size() * latent_size(); }
  void validate() const;

  nlohmann::json to_json() const;
  static TactileAeConfig from_json(const nlohmann::json& j);
};

// Pre-activation basic block: x + conv(act(gn(conv(act(gn(x)))))).
class ResLayerImpl : public torch::nn::Module {
 public:
  ResLayerImpl(int channels, int groups);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResLayer);

// Single-head scaled dot-product attention over spatial positions, added
// back onto the input.
class ResidualSelfAttentionImpl : public torch::nn::Module {
 public:
  ResidualSelfAttentionImpl(int channels, int dk);
  torch::Tensor forward(const torch::Tensor& x);
  // Softmax weights [B, HW, HW] for inspection.
  torch::Tensor weights(const torch::Tensor& x);

  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};

 private:
  int dk_;
};
TORCH_MODULE(ResidualSelfAttention);

class TactileEncoderImpl : public torch::nn::Module {
 public:
  explicit TactileEncoderImpl(const TactileAeConfig& cfg);
  // [B, S, S] or [B, 1, S, S] -> [B, C, s, s].
  torch::Tensor forward(const torch::Tensor& maps);

  torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
  torch::nn::Sequential stages{nullptr};

 private:
  TactileAeConfig cfg_;
};
TORCH_MODULE(TactileEncoder);

class TactileDecoderImpl : public torch::nn::Module {
 public:
  explicit TactileDecoderImpl(const TactileAeConfig& cfg);
  // [B, C, s, s] or flattened [B, C*s*s] -> [B, S, S] in [0, 1].
  torch::Tensor forward(const torch::Tensor& latent);

  const TactileAeConfig& config() const { return cfg_; }

  torch::nn::Conv2d conv_in{nullptr}, head{nullptr};
  ResLayer res_a{nullptr}, res_b{nullptr};
  ResidualSelfAttention attention{nullptr};
  torch::nn::Sequential stages{nullptr};
  torch::nn::GroupNorm head_norm{nullptr};

 private:
  TactileAeConfig cfg_;
};
TORCH_MODULE(TactileDecoder);

class TactileAutoencoderImpl : public torch::nn::Module {
 public:
  explicit TactileAutoencoderImpl(const TactileAeConfig& cfg);
  torch::Tensor forward(const torch::Tensor& maps);

  const TactileAeConfig& config() const { return cfg_; }

  TactileEncoder encoder{nullptr};
  TactileDecoder decoder{nullptr};

 private:
  TactileAeConfig cfg_;
};
TORCH_MODULE(TactileAutoencoder);

}  // namespace ptet::nn

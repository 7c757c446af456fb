#pragma once

#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace ptet::nn {

struct MaeConfig {
  int image_size = 64;
  int patch_size = 4;
  int embed_dim = 256;
  int encoder_layers = 12;
  int decoder_layers = 2;
  int decoder_embed_dim = 256;
  int heads = 4;
  int mlp_ratio = 4;
  double mask_ratio = 0.75;
  bool masked_loss_only = false;
  std::string latent = "cls";  // or "mean" over patch tokens

  int grid() const { return image_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size; }
  int masked_count() const;
  // Throws std::invalid_argument.
  void validate() const;

  nlohmann::json to_json() const;
  static MaeConfig from_json(const nlohmann::json& j);
};

// [B, H, W] -> [B, N, P*P], patches row-major, pixels row-major within each.
torch::Tensor patchify(const torch::Tensor& images, int patch_size);
torch::Tensor unpatchify(const torch::Tensor& patches, int patch_size, int image_size);

// Fixed 2D sine-cosine table, [1 + grid*grid, dim]; row 0 (class token) is zero.
torch::Tensor sincos_pos_embed(int dim, int grid);

struct MaskSample {
  torch::Tensor keep;     // [B, K] patch indices fed to the encoder
  torch::Tensor restore;  // [B, N] inverse of the shuffle
  torch::Tensor mask;     // [B, N] 1 = masked, in original patch order
};

// floor(ratio * N) patches masked per row, uniformly without replacement.
MaskSample mask_sample(int64_t batch, int64_t n_patches, double ratio, torch::Generator gen);

class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int dim, int heads, int mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};

 private:
  int heads_;
};
TORCH_MODULE(TransformerBlock);

class MaeEncoderImpl : public torch::nn::Module {
 public:
  explicit MaeEncoderImpl(const MaeConfig& cfg);

  // Patch embedding plus positional embedding, [B, N, D].
  torch::Tensor embed(const torch::Tensor& images);
  // Class token (with its positional slot) prepended, blocks, final norm.
  torch::Tensor encode_tokens(const torch::Tensor& patch_tokens);
  // All N patches visible when mask is undefined.
  torch::Tensor forward(const torch::Tensor& images, const MaskSample* mask = nullptr);
  // z_v: [B, D].
  torch::Tensor latent(const torch::Tensor& images);

  const MaeConfig& config() const { return cfg_; }

  torch::nn::Linear patch_embed{nullptr};
  torch::Tensor cls_token, pos_embed;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  MaeConfig cfg_;
};
TORCH_MODULE(MaeEncoder);

class MaeDecoderImpl : public torch::nn::Module {
 public:
  explicit MaeDecoderImpl(const MaeConfig& cfg);
  // tokens: encoder output [B, 1 + K, D]. Returns patch predictions [B, N, P*P].
  torch::Tensor forward(const torch::Tensor& tokens, const MaskSample& mask);

  torch::nn::Linear decoder_embed{nullptr}, pred{nullptr};
  torch::Tensor mask_token, pos_embed;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm norm{nullptr};

 private:
  MaeConfig cfg_;
};
TORCH_MODULE(MaeDecoder);

struct MaeOutput {
  torch::Tensor reconstruction;  // [B, H, W]
  torch::Tensor mask;            // [B, N]
  torch::Tensor loss;
};

class MaskedAutoencoderImpl : public torch::nn::Module {
 public:
  explicit MaskedAutoencoderImpl(const MaeConfig& cfg);
  MaeOutput forward(const torch::Tensor& images, double mask_ratio, torch::Generator gen);

  const MaeConfig& config() const { return cfg_; }

  MaeEncoder encoder{nullptr};
  MaeDecoder decoder{nullptr};

 private:
  MaeConfig cfg_;
};
TORCH_MODULE(MaskedAutoencoder);

int64_t count_parameters(const torch::nn::Module& module, bool trainable_only = false);

}  // namespace ptet::nn

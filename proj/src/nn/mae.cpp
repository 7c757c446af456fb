#include "ptet/nn/mae.hpp"

#include <cmath>
#include <stdexcept>

namespace ptet::nn {

namespace F = torch::nn::functional;
using nlohmann::json;

int MaeConfig::masked_count() const {
  return static_cast<int>(std::floor(mask_ratio * n_patches() + 1e-9));
}

void MaeConfig::validate() const {
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0)
    throw std::invalid_argument("mae: image_size must be a positive multiple of patch_size");
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0)
    throw std::invalid_argument("mae: heads must divide embed_dim");
  if (decoder_embed_dim <= 0 || decoder_embed_dim % heads != 0)
    throw std::invalid_argument("mae: heads must divide decoder_embed_dim");
  if (embed_dim % 4 != 0 || decoder_embed_dim % 4 != 0)
    throw std::invalid_argument("mae: embedding dims must be divisible by 4 for 2D sin-cos positions");
  if (encoder_layers < 1 || decoder_layers < 1 || mlp_ratio < 1)
    throw std::invalid_argument("mae: layer counts and mlp_ratio must be positive");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw std::invalid_argument("mae: mask_ratio must lie in [0, 1)");
  if (latent != "cls" && latent != "mean") throw std::invalid_argument("mae: latent must be 'cls' or 'mean'");
}

json MaeConfig::to_json() const {
  return {{"image_size", image_size},
          {"patch_size", patch_size},
          {"embed_dim", embed_dim},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"decoder_embed_dim", decoder_embed_dim},
          {"heads", heads},
          {"mlp_ratio", mlp_ratio},
          {"mask_ratio", mask_ratio},
          {"masked_loss_only", masked_loss_only},
          {"latent", latent}};
}

MaeConfig MaeConfig::from_json(const json& j) {
  MaeConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.decoder_embed_dim = j.value("decoder_embed_dim", c.embed_dim);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.mask_ratio = j.value("mask_ratio", c.mask_ratio);
  c.masked_loss_only = j.value("masked_loss_only", c.masked_loss_only);
  c.latent = j.value("latent", c.latent);
  for (const auto& [key, _] : j.items())
    if (!c.to_json().contains(key)) throw std::invalid_argument("mae: unknown config key '" + key + "'");
  c.validate();
  return c;
}

torch::Tensor patchify(const torch::Tensor& images, int p) {
  if (images.dim() != 3 || images.size(1) != images.size(2) || images.size(1) % p != 0)
    throw std::invalid_argument("patchify: expected [B, H, H] with H divisible by the patch size");
  const int64_t b = images.size(0), g = images.size(1) / p;
  return images.reshape({b, g, p, g, p}).permute({0, 1, 3, 2, 4}).reshape({b, g * g, p * p});
}

torch::Tensor unpatchify(const torch::Tensor& patches, int p, int image_size) {
  const int64_t g = image_size / p;
  if (patches.dim() != 3 || patches.size(1) != g * g || patches.size(2) != p * p)
    throw std::invalid_argument("unpatchify: patch tensor does not match the image geometry");
  const int64_t b = patches.size(0);
  return patches.reshape({b, g, g, p, p}).permute({0, 1, 3, 2, 4}).reshape({b, image_size, image_size});
}

torch::Tensor sincos_pos_embed(int dim, int grid) {
  auto axis = [&](const torch::Tensor& pos, int d) {
    auto omega = torch::arange(d / 2, torch::kFloat64) / (d / 2.0);
    omega = 1.0 / torch::pow(10000.0, omega);
    auto out = pos.unsqueeze(1) * omega.unsqueeze(0);
    return torch::cat({torch::sin(out), torch::cos(out)}, 1);
  };
  auto coords = torch::arange(grid, torch::kFloat64);
  auto rows = coords.repeat_interleave(grid);
  auto cols = coords.repeat({grid});
  auto table = torch::cat({axis(rows, dim / 2), axis(cols, dim / 2)}, 1);
  return torch::cat({torch::zeros({1, dim}, torch::kFloat64), table}, 0).to(torch::kFloat32);
}

MaskSample mask_sample(int64_t batch, int64_t n, double ratio, torch::Generator gen) {
  const auto masked = static_cast<int64_t>(std::floor(ratio * n + 1e-9));
  auto noise = torch::rand({batch, n}, gen);
  auto shuffle = noise.argsort(/*dim=*/int64_t{1});
  MaskSample s;
  s.restore = shuffle.argsort(int64_t{1});
  s.keep = shuffle.narrow(1, 0, n - masked);
  s.mask = torch::ones({batch, n});
  s.mask.narrow(1, 0, n - masked).zero_();
  s.mask = s.mask.gather(1, s.restore);
  return s;
}

TransformerBlockImpl::TransformerBlockImpl(int dim, int heads, int mlp_ratio) : heads_(heads) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1 = register_module("fc1", torch::nn::Linear(dim, mlp_ratio * dim));
  fc2 = register_module("fc2", torch::nn::Linear(mlp_ratio * dim, dim));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  const int64_t b = x.size(0), t = x.size(1), d = x.size(2);
  auto h = qkv->forward(norm1->forward(x)).reshape({b, t, 3, heads_, d / heads_}).permute({2, 0, 3, 1, 4});
  auto attn = at::scaled_dot_product_attention(h[0], h[1], h[2]);
  auto y = x + proj->forward(attn.transpose(1, 2).reshape({b, t, d}));
  return y + fc2->forward(F::gelu(fc1->forward(norm2->forward(y))));
}

namespace {

void init_weights(torch::nn::Module& m) {
  torch::NoGradGuard ng;
  for (auto& mod : m.modules(false)) {
    if (auto* lin = mod->as<torch::nn::Linear>()) {
      torch::nn::init::xavier_uniform_(lin->weight);
      if (lin->bias.defined()) torch::nn::init::zeros_(lin->bias);
    }
  }
}

}  // namespace

MaeEncoderImpl::MaeEncoderImpl(const MaeConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  patch_embed = register_module("patch_embed", torch::nn::Linear(cfg.patch_dim(), cfg.embed_dim));
  cls_token = register_parameter("cls_token", torch::zeros({1, 1, cfg.embed_dim}));
  pos_embed = register_buffer("pos_embed", sincos_pos_embed(cfg.embed_dim, cfg.grid()).unsqueeze(0));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.encoder_layers; ++i) blocks->push_back(TransformerBlock(cfg.embed_dim, cfg.heads, cfg.mlp_ratio));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.embed_dim})));
  init_weights(*this);
  torch::NoGradGuard ng;
  torch::nn::init::normal_(cls_token, 0.0, 0.02);
}

torch::Tensor MaeEncoderImpl::embed(const torch::Tensor& images) {
  return patch_embed->forward(patchify(images, cfg_.patch_size)) + pos_embed.narrow(1, 1, cfg_.n_patches());
}

torch::Tensor MaeEncoderImpl::encode_tokens(const torch::Tensor& patch_tokens) {
  auto cls = (cls_token + pos_embed.narrow(1, 0, 1)).expand({patch_tokens.size(0), -1, -1});
  auto x = torch::cat({cls, patch_tokens}, 1);
  for (const auto& blk : *blocks) x = blk->as<TransformerBlock>()->forward(x);
  return norm->forward(x);
}

torch::Tensor MaeEncoderImpl::forward(const torch::Tensor& images, const MaskSample* mask) {
  auto tokens = embed(images);
  if (mask) tokens = tokens.gather(1, mask->keep.unsqueeze(-1).expand({-1, -1, tokens.size(2)}));
  return encode_tokens(tokens);
}

torch::Tensor MaeEncoderImpl::latent(const torch::Tensor& images) {
  auto tokens = forward(images);
  if (cfg_.latent == "mean") return tokens.narrow(1, 1, tokens.size(1) - 1).mean(1);
  return tokens.select(1, 0);
}

MaeDecoderImpl::MaeDecoderImpl(const MaeConfig& cfg) : cfg_(cfg) {
  const int d = cfg.decoder_embed_dim;
  decoder_embed = register_module("decoder_embed", torch::nn::Linear(cfg.embed_dim, d));
  mask_token = register_parameter("mask_token", torch::zeros({1, 1, d}));
  pos_embed = register_buffer("pos_embed", sincos_pos_embed(d, cfg.grid()).unsqueeze(0));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.decoder_layers; ++i) blocks->push_back(TransformerBlock(d, cfg.heads, cfg.mlp_ratio));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  pred = register_module("pred", torch::nn::Linear(d, cfg.patch_dim()));
  init_weights(*this);
  torch::NoGradGuard ng;
  torch::nn::init::normal_(mask_token, 0.0, 0.02);
}

torch::Tensor MaeDecoderImpl::forward(const torch::Tensor& tokens, const MaskSample& mask) {
  const int64_t b = tokens.size(0), n = cfg_.n_patches();
  const int64_t visible = tokens.size(1) - 1;
  if (mask.restore.size(1) != n || mask.keep.size(1) != visible)
    throw std::invalid_argument("mae decoder: mask bookkeeping does not match the token count");
  auto x = decoder_embed->forward(tokens);
  auto filler = mask_token.expand({b, n - visible, -1});
  auto patches = torch::cat({x.narrow(1, 1, visible), filler}, 1);
  patches = patches.gather(1, mask.restore.unsqueeze(-1).expand({-1, -1, x.size(2)}));
  x = torch::cat({x.narrow(1, 0, 1), patches}, 1) + pos_embed;
  for (const auto& blk : *blocks) x = blk->as<TransformerBlock>()->forward(x);
  return pred->forward(norm->forward(x)).narrow(1, 1, n);
}

MaskedAutoencoderImpl::MaskedAutoencoderImpl(const MaeConfig& cfg) : cfg_(cfg) {
  encoder = register_module("encoder", MaeEncoder(cfg));
  decoder = register_module("decoder", MaeDecoder(cfg));
}

MaeOutput MaskedAutoencoderImpl::forward(const torch::Tensor& images, double mask_ratio, torch::Generator gen) {
  const auto m = mask_sample(images.size(0), cfg_.n_patches(), mask_ratio, gen);
  auto tokens = encoder->forward(images, &m);
  auto patches = decoder->forward(tokens, m);
  MaeOutput out;
  out.mask = m.mask;
  out.reconstruction = unpatchify(patches, cfg_.patch_size, cfg_.image_size);
  if (cfg_.masked_loss_only && m.mask.sum().item<double>() > 0) {
    auto per_patch = (patches - patchify(images, cfg_.patch_size)).pow(2).mean(-1);
    out.loss = (per_patch * m.mask).sum() / m.mask.sum();
  } else {
    out.loss = (out.reconstruction - images).pow(2).mean();
  }
  return out;
}

int64_t count_parameters(const torch::nn::Module& module, bool trainable_only) {
  int64_t n = 0;
  for (const auto& p : module.parameters())
    if (!trainable_only || p.requires_grad()) n += p.numel();
  return n;
}

}  // namespace ptet::nn

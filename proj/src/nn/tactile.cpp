#include "ptet/nn/tactile.hpp"

#include <cmath>
#include <stdexcept>

namespace ptet::nn {

namespace F = torch::nn::functional;
using nlohmann::json;

void TactileAeConfig::validate() const {
  if (channels.empty()) throw std::invalid_argument("tactile: channel schedule is empty");
  for (int c : channels)
    if (c <= 0 || c % groups != 0) throw std::invalid_argument("tactile: channels must be positive multiples of groups");
  if (map_size % (1 << channels.size()) != 0)
    throw std::invalid_argument("tactile: map_size must halve cleanly at every stage");
  if (res_layers < 1) throw std::invalid_argument("tactile: res_layers must be positive");
  if (attention_dim < 0) throw std::invalid_argument("tactile: attention_dim must be non-negative");
}

json TactileAeConfig::to_json() const {
  return {{"map_size", map_size},
          {"channels", channels},
          {"res_layers", res_layers},
          {"attention_dim", attention_dim},
          {"groups", groups}};
}

TactileAeConfig TactileAeConfig::from_json(const json& j) {
  TactileAeConfig c;
  c.map_size = j.value("map_size", c.map_size);
  c.channels = j.value("channels", c.channels);
  c.res_layers = j.value("res_layers", c.res_layers);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.groups = j.value("groups", c.groups);
  for (const auto& [key, _] : j.items())
    if (!c.to_json().contains(key)) throw std::invalid_argument("tactile: unknown config key '" + key + "'");
  c.validate();
  return c;
}

namespace {

torch::nn::Conv2d conv3(int in, int out, int stride = 1) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

// Nearest-neighbour x2 followed by a 3x3 convolution.
class UpsampleImpl : public torch::nn::Module {
 public:
  UpsampleImpl(int in, int out) { conv = register_module("conv", conv3(in, out)); }
  torch::Tensor forward(const torch::Tensor& x) {
    return conv->forward(
        F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2, 2}).mode(torch::kNearest)));
  }
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(Upsample);

}  // namespace

ResLayerImpl::ResLayerImpl(int channels, int groups) {
  norm1 = register_module("norm1", torch::nn::GroupNorm(groups, channels));
  conv1 = register_module("conv1", conv3(channels, channels));
  norm2 = register_module("norm2", torch::nn::GroupNorm(groups, channels));
  conv2 = register_module("conv2", conv3(channels, channels));
}

torch::Tensor ResLayerImpl::forward(const torch::Tensor& x) {
  auto h = conv1->forward(torch::relu(norm1->forward(x)));
  return x + conv2->forward(torch::relu(norm2->forward(h)));
}

ResidualSelfAttentionImpl::ResidualSelfAttentionImpl(int channels, int dk) : dk_(dk) {
  q = register_module("q", torch::nn::Linear(channels, dk));
  k = register_module("k", torch::nn::Linear(channels, dk));
  v = register_module("v", torch::nn::Linear(channels, dk));
  out = register_module("out", torch::nn::Linear(dk, channels));
}

torch::Tensor ResidualSelfAttentionImpl::weights(const torch::Tensor& x) {
  auto tokens = x.flatten(2).transpose(1, 2);
  auto scores = torch::matmul(q->forward(tokens), k->forward(tokens).transpose(1, 2)) / std::sqrt(double(dk_));
  return torch::softmax(scores, -1);
}

torch::Tensor ResidualSelfAttentionImpl::forward(const torch::Tensor& x) {
  auto tokens = x.flatten(2).transpose(1, 2);
  auto mixed = torch::matmul(weights(x), v->forward(tokens));
  return x + out->forward(mixed).transpose(1, 2).reshape(x.sizes());
}

TactileEncoderImpl::TactileEncoderImpl(const TactileAeConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  conv_in = register_module("conv_in", conv3(1, cfg.channels.front()));
  stages = register_module("stages", torch::nn::Sequential());
  int in = cfg.channels.front();
  for (int c : cfg.channels) {
    stages->push_back(conv3(in, c, 2));
    for (int r = 0; r < cfg.res_layers; ++r) stages->push_back(ResLayer(c, cfg.groups));
    in = c;
  }
  conv_out = register_module("conv_out", conv3(in, in));
}

torch::Tensor TactileEncoderImpl::forward(const torch::Tensor& maps) {
  auto x = maps.dim() == 3 ? maps.unsqueeze(1) : maps;
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != cfg_.map_size || x.size(3) != cfg_.map_size)
    throw std::invalid_argument("tactile encoder: expected [B, 1, S, S] maps");
  return conv_out->forward(stages->forward(conv_in->forward(x)));
}

TactileDecoderImpl::TactileDecoderImpl(const TactileAeConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int top = cfg.latent_channels();
  conv_in = register_module("conv_in", conv3(top, top));
  res_a = register_module("res_a", ResLayer(top, cfg.groups));
  if (cfg.attention_dim > 0)
    attention = register_module("attention", ResidualSelfAttention(top, cfg.attention_dim));
  res_b = register_module("res_b", ResLayer(top, cfg.groups));
  stages = register_module("stages", torch::nn::Sequential());
  int in = top;
  for (int i = static_cast<int>(cfg.channels.size()) - 2; i >= 0; --i) {
    const int c = cfg.channels[i];
    stages->push_back(Upsample(in, c));
    for (int r = 0; r < cfg.res_layers; ++r) stages->push_back(ResLayer(c, cfg.groups));
    in = c;
  }
  stages->push_back(Upsample(in, in));
  head_norm = register_module("head_norm", torch::nn::GroupNorm(cfg.groups, in));
  head = register_module("head", conv3(in, 1));
}

torch::Tensor TactileDecoderImpl::forward(const torch::Tensor& latent) {
  const int s = cfg_.latent_size(), c = cfg_.latent_channels();
  if (latent.dim() == 2 && latent.size(1) != int64_t{c} * s * s)
    throw std::invalid_argument("tactile decoder: flattened latent has the wrong length");
  auto x = latent.dim() == 2 ? latent.reshape({latent.size(0), c, s, s}) : latent;
  if (x.dim() != 4 || x.size(1) != c || x.size(2) != s || x.size(3) != s)
    throw std::invalid_argument("tactile decoder: latent shape does not match the config");
  x = res_a->forward(conv_in->forward(x));
  if (attention) x = attention->forward(x);
  x = stages->forward(res_b->forward(x));
  return torch::sigmoid(head->forward(torch::relu(head_norm->forward(x)))).squeeze(1);
}

TactileAutoencoderImpl::TactileAutoencoderImpl(const TactileAeConfig& cfg) : cfg_(cfg) {
  encoder = register_module("encoder", TactileEncoder(cfg));
  decoder = register_module("decoder", TactileDecoder(cfg));
}

torch::Tensor TactileAutoencoderImpl::forward(const torch::Tensor& maps) {
  return decoder->forward(encoder->forward(maps));
}

}  // namespace ptet::nn

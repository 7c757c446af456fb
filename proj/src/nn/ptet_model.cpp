#include "ptet/nn/ptet_model.hpp"

#include <stdexcept>

namespace ptet::nn {

using nlohmann::json;

json BridgeConfig::to_json() const {
  return {{"input_dim", input_dim}, {"output_dim", output_dim}, {"dropout", dropout}};
}

BridgeConfig BridgeConfig::from_json(const json& j) {
  BridgeConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.output_dim = j.value("output_dim", c.output_dim);
  c.dropout = j.value("dropout", c.dropout);
  if (c.input_dim <= 0 || c.output_dim <= 0) throw std::invalid_argument("bridge: dims must be positive");
  if (!(c.dropout >= 0 && c.dropout < 1)) throw std::invalid_argument("bridge: dropout must lie in [0, 1)");
  return c;
}

BridgeImpl::BridgeImpl(const BridgeConfig& cfg) {
  dropout = register_module("dropout", torch::nn::Dropout(cfg.dropout));
  linear = register_module("linear", torch::nn::Linear(cfg.input_dim, cfg.output_dim));
}

torch::Tensor BridgeImpl::forward(const torch::Tensor& zv) { return linear->forward(dropout->forward(zv)); }

PtetModelImpl::PtetModelImpl(const MaeConfig& mae, const TactileAeConfig& tactile, double p)
    : mae_(mae), tactile_(tactile) {
  encoder = register_module("encoder", MaeEncoder(mae));
  BridgeConfig b{mae.embed_dim, static_cast<int>(tactile.latent_numel()), p};
  bridge = register_module("bridge", Bridge(b));
  decoder = register_module("decoder", TactileDecoder(tactile));
}

torch::Tensor PtetModelImpl::latent(const torch::Tensor& e2im) {
  if (frozen_) {
    torch::NoGradGuard ng;
    return encoder->latent(e2im);
  }
  return encoder->latent(e2im);
}

torch::Tensor PtetModelImpl::forward_latent(const torch::Tensor& zv) {
  return decoder->forward(bridge->forward(zv));
}

torch::Tensor PtetModelImpl::forward(const torch::Tensor& e2im) { return forward_latent(latent(e2im)); }

void PtetModelImpl::set_encoder_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : encoder->parameters()) p.set_requires_grad(!frozen);
  encoder->train(is_training() && !frozen);
}

void PtetModelImpl::train(bool on) {
  torch::nn::Module::train(on);
  if (frozen_) encoder->train(false);
}

torch::Tensor predict(PtetModel& model, const torch::Tensor& e2im) {
  const bool was_training = model->is_training();
  model->eval();
  torch::Tensor out;
  {
    torch::NoGradGuard ng;
    out = model->forward(e2im);
  }
  model->train(was_training);
  return out;
}

std::vector<torch::Tensor> trainable_parameters(const torch::nn::Module& module) {
  std::vector<torch::Tensor> out;
  for (const auto& p : module.parameters())
    if (p.requires_grad()) out.push_back(p);
  return out;
}

}  // namespace ptet::nn

#include "ptet/nn/pipelines.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "ptet/eval/metrics.hpp"

namespace ptet::nn {

using nlohmann::json;

namespace {

constexpr std::uint64_t kValidationStream = 3;

template <class Fn>
double chunked_mean(int64_t n, int64_t batch, Fn&& fn) {
  torch::NoGradGuard ng;
  double total = 0;
  for (int64_t lo = 0; lo < n; lo += batch) {
    const int64_t len = std::min(batch, n - lo);
    total += fn(lo, len) * len;
  }
  return total / n;
}

LoopSpec base_spec(const RunOptions& opt, torch::nn::Module& module, int64_t train_size) {
  LoopSpec s;
  s.config = opt.train;
  s.train_size = train_size;
  s.module = &module;
  s.checkpoint_dir = opt.checkpoint_dir;
  s.meta = opt.meta;
  s.resume = opt.resume;
  s.on_epoch = opt.on_epoch;
  return s;
}

}  // namespace

TrainResult pretrain_voltage(MaskedAutoencoder& model, const InputEncoder& input, const TensorSplit& train,
                             const TensorSplit& val, const RunOptions& opt) {
  if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("pretrain: empty split");
  const double ratio = model->config().mask_ratio;
  auto spec = base_spec(opt, *model, train.size());
  spec.meta["mae"] = model->config().to_json();
  spec.meta["input"] = input.to_json();
  spec.parameters = model->parameters();
  spec.batch_loss = [&](const torch::Tensor& idx, torch::Generator gen) {
    return model->forward(input.images(train.frames.index_select(0, idx)), ratio, gen).loss;
  };
  spec.validate = [&, seed = opt.train.seed] {
    auto gen = make_generator(seed, kValidationStream);
    return chunked_mean(val.size(), 256, [&](int64_t lo, int64_t len) {
      return model->forward(input.images(val.frames.narrow(0, lo, len)), ratio, gen).loss.item<double>();
    });
  };
  return run_training(std::move(spec));
}

TrainResult pretrain_tactile(TactileAutoencoder& model, const torch::Tensor& train_maps, const torch::Tensor& val_maps,
                             const RunOptions& opt) {
  if (train_maps.size(0) == 0 || val_maps.size(0) == 0) throw std::invalid_argument("pretrain: empty split");
  auto spec = base_spec(opt, *model, train_maps.size(0));
  spec.meta["tactile"] = model->config().to_json();
  spec.parameters = model->parameters();
  spec.batch_loss = [&](const torch::Tensor& idx, torch::Generator) {
    auto maps = train_maps.index_select(0, idx);
    return (model->forward(maps) - maps).pow(2).mean();
  };
  spec.validate = [&] {
    return chunked_mean(val_maps.size(0), 256, [&](int64_t lo, int64_t len) {
      auto maps = val_maps.narrow(0, lo, len);
      return (model->forward(maps) - maps).pow(2).mean().item<double>();
    });
  };
  return run_training(std::move(spec));
}

FinetuneResult finetune(PtetModel& model, const InputEncoder& input, const TensorSplit& train, const TensorSplit& val,
                        const FinetuneOptions& opt) {
  if (train.size() == 0) throw std::invalid_argument("finetune: no labelled pairs");
  if (val.size() == 0) throw std::invalid_argument("finetune: empty validation split");
  FinetuneResult out;
  out.encoder_hash_before = parameter_hash(*model->encoder);
  const bool frozen = model->encoder_frozen();

  auto weights = opt.pixel_weights;
  auto loss_fn = [&](const torch::Tensor& pred, const torch::Tensor& target) {
    auto sq = (pred - target).pow(2);
    auto loss = sq.mean();
    if (weights.defined() && opt.sensitivity_weight > 0) loss = loss + opt.sensitivity_weight * (sq * weights).mean();
    return loss;
  };

  torch::Tensor z_train, z_val;
  if (frozen) {
    torch::NoGradGuard ng;
    model->encoder->eval();
    auto encode = [&](const TensorSplit& s) {
      std::vector<torch::Tensor> parts;
      for (int64_t lo = 0; lo < s.size(); lo += 256)
        parts.push_back(model->encoder->latent(input.images(s.frames.narrow(0, lo, std::min<int64_t>(256, s.size() - lo)))));
      return torch::cat(parts, 0);
    };
    z_train = encode(train);
    z_val = encode(val);
  }

  auto spec = base_spec(opt.run, *model, train.size());
  spec.meta["mae"] = model->mae_config().to_json();
  spec.meta["tactile"] = model->tactile_config().to_json();
  spec.meta["input"] = input.to_json();
  spec.meta["encoder_frozen"] = frozen;
  spec.meta["labels"] = train.size();
  spec.parameters = trainable_parameters(*model);
  spec.batch_loss = [&](const torch::Tensor& idx, torch::Generator) {
    auto target = train.maps.index_select(0, idx);
    if (frozen) return loss_fn(model->forward_latent(z_train.index_select(0, idx)), target);
    return loss_fn(model->forward(input.images(train.frames.index_select(0, idx))), target);
  };
  spec.validate = [&] {
    return chunked_mean(val.size(), 256, [&](int64_t lo, int64_t len) {
      auto pred = frozen ? model->forward_latent(z_val.narrow(0, lo, len))
                         : model->forward(input.images(val.frames.narrow(0, lo, len)));
      return (pred - val.maps.narrow(0, lo, len)).pow(2).mean().item<double>();
    });
  };
  out.train = run_training(std::move(spec));
  out.encoder_hash_after = parameter_hash(*model->encoder);
  if (frozen && out.encoder_hash_after != out.encoder_hash_before)
    throw std::logic_error("finetune: frozen encoder parameters changed");
  return out;
}

PtetModel assemble(const std::filesystem::path& voltage_ckpt, const std::filesystem::path& tactile_ckpt,
                   double dropout, std::uint64_t seed) {
  const json vm = read_checkpoint_meta(voltage_ckpt);
  const json tm = read_checkpoint_meta(tactile_ckpt);
  if (!vm.contains("mae")) throw CheckpointError(voltage_ckpt.string() + " is not a voltage pretraining checkpoint");
  if (!tm.contains("tactile")) throw CheckpointError(tactile_ckpt.string() + " is not a tactile pretraining checkpoint");
  const auto mae_cfg = MaeConfig::from_json(vm["mae"]);
  const auto tact_cfg = TactileAeConfig::from_json(tm["tactile"]);

  MaskedAutoencoder mae(mae_cfg);
  load_checkpoint(voltage_ckpt, *mae);
  TactileAutoencoder tae(tact_cfg);
  load_checkpoint(tactile_ckpt, *tae);

  torch::manual_seed(seed);
  PtetModel model(mae_cfg, tact_cfg, dropout);
  torch::NoGradGuard ng;
  auto copy = [](torch::nn::Module& dst, const torch::nn::Module& src) {
    auto sp = src.named_parameters(), dp = dst.named_parameters();
    if (sp.size() != dp.size()) throw CheckpointError("assemble: parameter layout mismatch");
    for (auto& item : dp) {
      const auto* s = sp.find(item.key());
      if (!s || s->sizes() != item.value().sizes()) throw CheckpointError("assemble: mismatched tensor " + item.key());
      item.value().copy_(*s);
    }
    auto sb = src.named_buffers(), db = dst.named_buffers();
    for (auto& item : db)
      if (const auto* s = sb.find(item.key())) item.value().copy_(*s);
  };
  copy(*model->encoder, *mae->encoder);
  copy(*model->decoder, *tae->decoder);
  model->set_encoder_frozen(true);
  return model;
}

torch::Tensor predict_maps(PtetModel& model, const InputEncoder& input, const TensorSplit& split, int64_t batch) {
  std::vector<torch::Tensor> parts;
  for (int64_t lo = 0; lo < split.size(); lo += batch)
    parts.push_back(predict(model, input.images(split.frames.narrow(0, lo, std::min(batch, split.size() - lo)))));
  if (parts.empty()) return torch::zeros({0, model->tactile_config().map_size, model->tactile_config().map_size});
  return torch::cat(parts, 0);
}

ReconstructionScore mae_reconstruction(MaskedAutoencoder& model, const InputEncoder& input, const TensorSplit& split,
                                       double mask_ratio, std::uint64_t seed, int64_t batch) {
  if (split.size() == 0) throw std::invalid_argument("reconstruction: empty split");
  torch::NoGradGuard ng;
  const bool was_training = model->is_training();
  model->eval();
  auto gen = make_generator(seed, kValidationStream);
  ReconstructionScore score;
  const int size = input.image_size();
  for (int64_t lo = 0; lo < split.size(); lo += batch) {
    const int64_t len = std::min(batch, split.size() - lo);
    auto images = input.images(split.frames.narrow(0, lo, len));
    auto rec = model->forward(images, mask_ratio, gen).reconstruction.to(torch::kFloat64).contiguous();
    auto gt = images.to(torch::kFloat64).contiguous();
    score.mse += (rec - gt).pow(2).mean().item<double>() * len;
    for (int64_t i = 0; i < len; ++i) {
      Grid2D<double> a(size, size, 0.0), b(size, size, 0.0);
      std::memcpy(a.values().data(), rec[i].data_ptr<double>(), sizeof(double) * size * size);
      std::memcpy(b.values().data(), gt[i].data_ptr<double>(), sizeof(double) * size * size);
      const auto [mn, mx] = std::minmax_element(b.values().begin(), b.values().end());
      eval::SsimOptions o;
      o.data_range = *mx - *mn > 0 ? *mx - *mn : 1.0;
      score.ssim += eval::ssim(a, b, o);
    }
  }
  model->train(was_training);
  score.ssim /= split.size();
  score.mse /= split.size();
  return score;
}

torch::Tensor sensitivity_weights(const torch::Tensor& jacobian_pixels, int size) {
  auto w = jacobian_pixels.to(torch::kFloat64).pow(2).sum(0).sqrt();
  w = w / w.mean();
  return w.reshape({size, size}).to(torch::kFloat32);
}

}  // namespace ptet::nn

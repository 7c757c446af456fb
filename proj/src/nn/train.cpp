#include "ptet/nn/train.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "ptet/core/hash.hpp"

namespace ptet::nn {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (optimizer != "adamw" && optimizer != "adam") throw std::invalid_argument("train: optimizer must be adamw or adam");
  if (scheduler != "cosine" && scheduler != "plateau" && scheduler != "constant")
    throw std::invalid_argument("train: scheduler must be cosine, plateau or constant");
  if (!(lr > 0)) throw std::invalid_argument("train: lr must be positive");
  if (weight_decay < 0) throw std::invalid_argument("train: weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("train: betas must lie in [0, 1)");
  if (!(reduce_factor > 0 && reduce_factor < 1)) throw std::invalid_argument("train: reduce_factor must lie in (0, 1)");
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("train: epochs and batch_size must be positive");
  if (warmup_epochs < 0 || reduce_patience < 0 || early_stopping_patience < 0)
    throw std::invalid_argument("train: patience and warmup must be non-negative");
  if (min_lr < 0 || grad_clip < 0) throw std::invalid_argument("train: min_lr and grad_clip must be non-negative");
}

json TrainConfig::to_json() const {
  return {{"optimizer", optimizer},
          {"lr", lr},
          {"scale_lr_by_batch", scale_lr_by_batch},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"scheduler", scheduler},
          {"reduce_factor", reduce_factor},
          {"reduce_patience", reduce_patience},
          {"warmup_epochs", warmup_epochs},
          {"epochs", epochs},
          {"early_stopping_patience", early_stopping_patience},
          {"batch_size", batch_size},
          {"min_lr", min_lr},
          {"grad_clip", grad_clip},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& d) {
  TrainConfig c = d;
  const json known = d.to_json();
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("train: unknown config key '" + key + "'");
  c.optimizer = j.value("optimizer", c.optimizer);
  c.lr = j.value("lr", c.lr);
  c.scale_lr_by_batch = j.value("scale_lr_by_batch", c.scale_lr_by_batch);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.scheduler = j.value("scheduler", c.scheduler);
  c.reduce_factor = j.value("reduce_factor", c.reduce_factor);
  c.reduce_patience = j.value("reduce_patience", c.reduce_patience);
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.epochs = j.value("epochs", c.epochs);
  c.early_stopping_patience = j.value("early_stopping_patience", c.early_stopping_patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.min_lr = j.value("min_lr", c.min_lr);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

TrainConfig TrainConfig::voltage_pretraining() { return {}; }

TrainConfig TrainConfig::tactile_pretraining() {
  TrainConfig c;
  c.scheduler = "plateau";
  return c;
}

TrainConfig TrainConfig::finetuning() {
  TrainConfig c;
  c.optimizer = "adam";
  c.lr = 1e-4;
  c.weight_decay = 0.0;
  c.beta1 = 0.9;
  c.beta2 = 0.999;
  c.warmup_epochs = 10;
  return c;
}

CosineSchedule::CosineSchedule(double base, double min_lr, int warmup, int total)
    : base_(base), min_(min_lr), warmup_(warmup), total_(total) {}

double CosineSchedule::at(double epoch) const {
  if (epoch < warmup_) return base_ * epoch / warmup_;
  const double span = std::max(total_ - warmup_, 1e-12);
  const double t = std::clamp((epoch - warmup_) / span, 0.0, 1.0);
  return min_ + (base_ - min_) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

PlateauSchedule::PlateauSchedule(double base, double factor, int patience, double min_lr, double threshold)
    : lr_(base), factor_(factor), min_(min_lr), threshold_(threshold), patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {}

double PlateauSchedule::step(double metric) {
  if (metric < best_ * (1.0 - threshold_)) {
    best_ = metric;
    bad_ = 0;
  } else if (++bad_ > patience_) {
    lr_ = std::max(lr_ * factor_, min_);
    bad_ = 0;
  }
  return lr_;
}

json PlateauSchedule::state() const { return {{"lr", lr_}, {"best", best_}, {"bad", bad_}}; }

void PlateauSchedule::restore(const json& s) {
  lr_ = s.at("lr");
  best_ = s.at("best").is_null() ? std::numeric_limits<double>::infinity() : s.at("best").get<double>();
  bad_ = s.at("bad");
}

bool EarlyStopping::update(double metric) {
  if (metric < best_) {
    best_ = metric;
    bad_ = 0;
    return false;
  }
  return ++bad_ > patience_;
}

json EarlyStopping::state() const { return {{"best", best_}, {"bad", bad_}}; }

void EarlyStopping::restore(const json& s) {
  best_ = s.at("best").is_null() ? std::numeric_limits<double>::infinity() : s.at("best").get<double>();
  bad_ = s.at("bad");
}

json TrainResult::to_json() const {
  json h = json::array();
  for (const auto& r : history)
    h.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"lr", r.lr}});
  return {{"history", h}, {"best_epoch", best_epoch}, {"best_val", best_val}, {"stopped_early", stopped_early}};
}

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
  if (!out) throw CheckpointError("cannot write " + p.string());
}

// libtorch's own optimizer archive keys state by tensor address, so its bytes
// change from run to run. Adam state is stored here by parameter position.
template <class State>
bool save_adam_state(torch::optim::Optimizer& opt, torch::serialize::OutputArchive& ar) {
  int64_t i = 0;
  for (const auto& p : opt.param_groups().at(0).params()) {
    const auto it = opt.state().find(p.unsafeGetTensorImpl());
    if (it != opt.state().end()) {
      const auto* st = dynamic_cast<const State*>(it->second.get());
      if (!st) return false;
      const auto key = "p" + std::to_string(i);
      ar.write(key + ".step", torch::tensor(st->step(), torch::kInt64));
      ar.write(key + ".exp_avg", st->exp_avg());
      ar.write(key + ".exp_avg_sq", st->exp_avg_sq());
      if (st->max_exp_avg_sq().defined()) ar.write(key + ".max_exp_avg_sq", st->max_exp_avg_sq());
    }
    ++i;
  }
  ar.write("param_count", torch::tensor(i, torch::kInt64));
  return true;
}

template <class State>
void load_adam_state(torch::optim::Optimizer& opt, torch::serialize::InputArchive& ar) {
  torch::Tensor count;
  ar.read("param_count", count);
  const auto& params = opt.param_groups().at(0).params();
  if (count.item<int64_t>() != static_cast<int64_t>(params.size()))
    throw CheckpointError("optimizer state does not match the parameter list");
  opt.state().clear();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto key = "p" + std::to_string(i);
    torch::Tensor step;
    if (!ar.try_read(key + ".step", step)) continue;
    auto st = std::make_unique<State>();
    torch::Tensor exp_avg, exp_avg_sq, max_sq;
    ar.read(key + ".exp_avg", exp_avg);
    ar.read(key + ".exp_avg_sq", exp_avg_sq);
    st->step(step.item<int64_t>());
    st->exp_avg(exp_avg);
    st->exp_avg_sq(exp_avg_sq);
    if (ar.try_read(key + ".max_exp_avg_sq", max_sq)) st->max_exp_avg_sq(max_sq);
    opt.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
  }
}

void save_optimizer(torch::optim::Optimizer& opt, torch::serialize::OutputArchive& ar) {
  if (dynamic_cast<torch::optim::AdamW*>(&opt)) {
    if (save_adam_state<torch::optim::AdamWParamState>(opt, ar)) return;
  } else if (dynamic_cast<torch::optim::Adam*>(&opt)) {
    if (save_adam_state<torch::optim::AdamParamState>(opt, ar)) return;
  }
  opt.save(ar);
}

void load_optimizer(torch::optim::Optimizer& opt, torch::serialize::InputArchive& ar) {
  torch::Tensor probe;
  if (!ar.try_read("param_count", probe)) return opt.load(ar);
  if (dynamic_cast<torch::optim::AdamW*>(&opt)) return load_adam_state<torch::optim::AdamWParamState>(opt, ar);
  if (dynamic_cast<torch::optim::Adam*>(&opt)) return load_adam_state<torch::optim::AdamParamState>(opt, ar);
  throw CheckpointError("optimizer state was written for a different optimizer");
}

}  // namespace

void save_checkpoint(const fs::path& dir, torch::nn::Module& module, torch::optim::Optimizer* optimizer,
                     const json& meta) {
  const fs::path tmp = dir.string() + ".tmp";
  const fs::path old = dir.string() + ".old";
  try {
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    {
      torch::serialize::OutputArchive ar;
      module.save(ar);
      ar.save_to((tmp / "model.pt").string());
    }
    if (optimizer) {
      torch::serialize::OutputArchive ar;
      save_optimizer(*optimizer, ar);
      ar.save_to((tmp / "optimizer.pt").string());
    }
    json m = meta;
    m["parameter_hash"] = parameter_hash(module);
    write_text(tmp / "meta.json", m.dump(2) + "\n");
    fs::remove_all(old);
    if (fs::exists(dir)) fs::rename(dir, old);
    fs::rename(tmp, dir);
    fs::remove_all(old);
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(tmp);
    throw CheckpointError(std::string("checkpoint write failed: ") + e.what());
  } catch (const c10::Error& e) {
    fs::remove_all(tmp);
    throw CheckpointError(std::string("checkpoint write failed: ") + e.what_without_backtrace());
  }
}

json read_checkpoint_meta(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw CheckpointError("missing checkpoint metadata in " + dir.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CheckpointError("corrupted checkpoint metadata in " + dir.string() + ": " + e.what());
  }
}

json load_checkpoint(const fs::path& dir, torch::nn::Module& module, torch::optim::Optimizer* optimizer) {
  json meta = read_checkpoint_meta(dir);
  try {
    torch::serialize::InputArchive ar;
    ar.load_from((dir / "model.pt").string());
    module.load(ar);
    if (optimizer) {
      torch::serialize::InputArchive oar;
      oar.load_from((dir / "optimizer.pt").string());
      load_optimizer(*optimizer, oar);
    }
  } catch (const c10::Error& e) {
    throw CheckpointError("cannot load checkpoint " + dir.string() + ": " + e.what_without_backtrace());
  }
  if (meta.contains("parameter_hash") && meta["parameter_hash"] != parameter_hash(module))
    throw CheckpointError("checkpoint " + dir.string() + " failed its integrity check");
  return meta;
}

std::string parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = fnv1a64("");
  auto feed = [&](const torch::Tensor& t) {
    auto c = t.detach().contiguous().cpu();
    h = fnv1a64(std::string_view(static_cast<const char*>(c.data_ptr()), c.nbytes()), h);
  };
  for (const auto& p : module.parameters()) feed(p);
  for (const auto& b : module.buffers()) feed(b);
  return hex64(h);
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(const TrainConfig& cfg, std::vector<torch::Tensor> params) {
  if (params.empty()) throw std::invalid_argument("train: no trainable parameters");
  if (cfg.optimizer == "adamw") {
    torch::optim::AdamWOptions o(cfg.base_lr());
    o.betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay);
    return std::make_unique<torch::optim::AdamW>(std::move(params), o);
  }
  torch::optim::AdamOptions o(cfg.base_lr());
  o.betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay);
  return std::make_unique<torch::optim::Adam>(std::move(params), o);
}

torch::Generator make_generator(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&seed), sizeof seed));
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&stream), sizeof stream), h);
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&index), sizeof index), h);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(h);
  return gen;
}

namespace {

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& g : opt.param_groups()) g.options().set_lr(lr);
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::vector<torch::Tensor> s;
  for (const auto& p : m.parameters()) s.push_back(p.detach().clone());
  for (const auto& b : m.buffers()) s.push_back(b.detach().clone());
  return s;
}

void restore_snapshot(torch::nn::Module& m, const std::vector<torch::Tensor>& s) {
  torch::NoGradGuard ng;
  std::size_t i = 0;
  for (auto& p : m.parameters()) p.copy_(s[i++]);
  for (auto& b : m.buffers()) b.copy_(s[i++]);
}

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kBatchStream = 2;
constexpr std::uint64_t kGlobalStream = 4;

}  // namespace

TrainResult run_training(LoopSpec spec) {
  const auto& cfg = spec.config;
  cfg.validate();
  if (spec.train_size <= 0) throw std::invalid_argument("train: empty training set");
  if (!spec.module || !spec.batch_loss || !spec.validate) throw std::invalid_argument("train: incomplete loop spec");
  auto optimizer = make_optimizer(cfg, spec.parameters);
  const CosineSchedule cosine(cfg.base_lr(), cfg.min_lr, cfg.warmup_epochs, cfg.epochs);
  PlateauSchedule plateau(cfg.base_lr(), cfg.reduce_factor, cfg.reduce_patience, cfg.min_lr);
  EarlyStopping stopper(cfg.early_stopping_patience);
  TrainResult result;
  int start = 0;

  const int64_t batches = (spec.train_size + cfg.batch_size - 1) / cfg.batch_size;
  json meta = spec.meta;
  meta["train_config"] = cfg.to_json();

  if (spec.resume) {
    if (!spec.checkpoint_dir) throw std::invalid_argument("train: resume requires a checkpoint directory");
    const auto last = *spec.checkpoint_dir / "last";
    const json m = load_checkpoint(last, *spec.module, optimizer.get());
    if (m.at("train_config") != meta["train_config"])
      throw CheckpointError("resume: training configuration differs from the checkpoint");
    start = m.at("epoch").get<int>() + 1;
    plateau.restore(m.at("plateau"));
    stopper.restore(m.at("early_stopping"));
    for (const auto& r : m.at("history")) {
      result.history.push_back({r.at("epoch"), r.at("train_loss"), r.at("val_loss"), r.at("lr")});
    }
    result.best_epoch = m.at("best_epoch");
    result.best_val = stopper.best();
    if (m.value("finished", false)) start = cfg.epochs;
  }
  auto best_state = snapshot(*spec.module);
  if (spec.resume && fs::exists(*spec.checkpoint_dir / "best")) {
    auto probe = snapshot(*spec.module);
    load_checkpoint(*spec.checkpoint_dir / "best", *spec.module);
    best_state = snapshot(*spec.module);
    restore_snapshot(*spec.module, probe);
  }

  for (int epoch = start; epoch < cfg.epochs; ++epoch) {
    spec.module->train();
    auto order = torch::randperm(spec.train_size, make_generator(cfg.seed, kShuffleStream, epoch), torch::kLong);
    double total = 0;
    double lr = plateau.lr();
    for (int64_t b = 0; b < batches; ++b) {
      const double progress = epoch + double(b) / batches;
      if (cfg.scheduler == "cosine") {
        lr = cosine.at(progress);
      } else {
        lr = plateau.lr();
        if (progress < cfg.warmup_epochs) lr *= progress / cfg.warmup_epochs;
        if (cfg.scheduler == "constant") lr = cfg.base_lr() * std::min(1.0, cfg.warmup_epochs ? progress / cfg.warmup_epochs : 1.0);
      }
      set_lr(*optimizer, lr);
      const int64_t lo = b * cfg.batch_size, n = std::min<int64_t>(cfg.batch_size, spec.train_size - lo);
      auto idx = order.narrow(0, lo, n);
      optimizer->zero_grad();
      // Modules drawing from the global generator (dropout) replay exactly on resume.
      torch::manual_seed(make_generator(cfg.seed, kGlobalStream, epoch * batches + b).current_seed());
      auto loss = spec.batch_loss(idx, make_generator(cfg.seed, kBatchStream, epoch * batches + b));
      const double value = loss.item<double>();
      if (!std::isfinite(value))
        throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(b) + " (lr " + std::to_string(lr) + ")");
      loss.backward();
      if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(spec.parameters, cfg.grad_clip);
      optimizer->step();
      total += value * n;
    }
    spec.module->eval();
    const double val = spec.validate();
    if (!std::isfinite(val)) throw TrainingDiverged("non-finite validation loss at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, total / spec.train_size, val, lr};
    result.history.push_back(rec);
    if (cfg.scheduler == "plateau" && epoch + 1 >= cfg.warmup_epochs) plateau.step(val);
    const bool stop = stopper.update(val);
    const bool improved = stopper.improved();
    if (improved) {
      result.best_epoch = epoch;
      result.best_val = val;
      best_state = snapshot(*spec.module);
    }
    if (spec.on_epoch) spec.on_epoch(rec);
    const bool finished = stop || epoch + 1 == cfg.epochs;
    if (spec.checkpoint_dir) {
      json m = meta;
      m["epoch"] = epoch;
      m["val_loss"] = val;
      m["best_epoch"] = result.best_epoch;
      m["plateau"] = plateau.state();
      m["early_stopping"] = stopper.state();
      m["finished"] = finished;
      json hist = TrainResult{result.history, 0, 0, false}.to_json()["history"];
      m["history"] = hist;
      if (improved) {
        json bm = meta;
        bm["epoch"] = epoch;
        bm["val_loss"] = val;
        save_checkpoint(*spec.checkpoint_dir / "best", *spec.module, nullptr, bm);
      }
      save_checkpoint(*spec.checkpoint_dir / "last", *spec.module, optimizer.get(), m);
    }
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  restore_snapshot(*spec.module, best_state);
  spec.module->eval();
  return result;
}

}  // namespace ptet::nn

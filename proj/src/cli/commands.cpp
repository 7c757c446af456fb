#include "ptet/cli/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include <torch/torch.h>

#include "CLI11.hpp"
#include "ptet/core/hash.hpp"
#include "ptet/data/dataset.hpp"
#include "ptet/eval/report.hpp"
#include "ptet/eval/tikhonov.hpp"
#include "ptet/forward/fem.hpp"
#include "ptet/nn/pipelines.hpp"

namespace ptet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kConfigBlocks{"seed",     "dataset",          "input",            "mae",
                                             "tactile",  "ptet",             "pretrain_voltage", "pretrain_tactile",
                                             "finetune", "train_sl",         "eval"};

json block(const Common& c, const std::string& name) {
  if (!c.config.contains(name)) return json::object();
  const auto& b = c.config.at(name);
  if (!b.is_object()) throw ConfigError("config block '" + name + "' must be an object");
  return b;
}

std::uint64_t seed_of(const Common& c) { return c.seed; }

void log(const Common& c, const std::string& line) {
  if (!c.quiet) std::cout << line << std::endl;
}

std::string config_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

// Run provenance merged into every artifact.
json provenance(const Common& c, const std::string& command, json effective) {
  return {{"command", command},
          {"seed", seed_of(c)},
          {"config", effective},
          {"config_hash", config_hash(effective)}};
}

nn::TrainConfig train_config(const Common& c, const std::string& name, const nn::TrainConfig& defaults,
                             std::optional<int> epochs) {
  auto cfg = nn::TrainConfig::from_json(block(c, name), defaults);
  if (!block(c, name).contains("seed")) cfg.seed = seed_of(c);
  if (epochs) cfg.epochs = *epochs;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
}

std::function<void(const nn::EpochRecord&)> epoch_logger(const Common& c, const std::string& tag) {
  return [&c, tag](const nn::EpochRecord& r) {
    std::ostringstream s;
    s << tag << " epoch " << r.epoch << " train " << std::setprecision(6) << r.train_loss << " val " << r.val_loss
      << " lr " << r.lr;
    log(c, s.str());
    if (c.on_epoch) c.on_epoch(r.epoch, r.train_loss, r.val_loss);
  };
}

struct PtetSettings {
  double dropout = 0.5;
  double sensitivity_weight = 0.0;
};

PtetSettings ptet_settings(const Common& c) {
  const auto b = block(c, "ptet");
  PtetSettings s;
  for (const auto& [key, value] : b.items()) {
    if (key == "dropout") s.dropout = value.get<double>();
    else if (key == "sensitivity_weight") s.sensitivity_weight = value.get<double>();
    else throw ConfigError("ptet: unknown config key '" + key + "'");
  }
  if (s.dropout < 0 || s.dropout >= 1) throw ConfigError("ptet: dropout must lie in [0, 1)");
  if (s.sensitivity_weight < 0) throw ConfigError("ptet: sensitivity_weight must be >= 0");
  return s;
}

struct EvalSettings {
  int panels = 8;
  double tikhonov_lambda = 1e-2;
  double mask_ratio = -1;  // < 0: the model's training ratio
};

EvalSettings eval_settings(const Common& c) {
  EvalSettings s;
  const auto b = block(c, "eval");
  for (const auto& [key, value] : b.items()) {
    if (key == "panels") s.panels = value.get<int>();
    else if (key == "tikhonov_lambda") s.tikhonov_lambda = value.get<double>();
    else if (key == "mask_ratio") s.mask_ratio = value.get<double>();
    else throw ConfigError("eval: unknown config key '" + key + "'");
  }
  return s;
}

fs::path dataset_dir(const fs::path& p) {
  if (p.empty()) throw ConfigError("--data is required");
  const auto dir = output_path(p);
  if (!fs::exists(dir / "manifest.json")) throw data::DatasetIoError("no dataset manifest under " + dir.string());
  return dir;
}

json dataset_ref(const fs::path& dir) {
  const auto m = data::read_manifest(dir);
  return {{"path", dir.string()}, {"config_hash", m.config_hash}, {"seed", m.seed}, {"snr_db", m.snr_db ? json(*m.snr_db) : json()}};
}

// Pixel Jacobian at the homogeneous background of the dataset's mesh.
Eigen::MatrixXd dataset_jacobian(const fs::path& dir) {
  const auto m = data::read_manifest(dir);
  const auto cfg = data::DatasetConfig::from_json(m.config);
  forward::SolverOptions opt;
  opt.contact_impedance = cfg.contact_impedance;
  const auto ctx = data::SimulationContext::create(cfg.refinement_level, {}, opt);
  return forward::ForwardSolver(ctx.mesh, forward::ConductivityField::uniform(ctx.mesh), ctx.pattern, ctx.options)
      .jacobian_pixels();
}

nn::PtetModel load_ptet(const fs::path& ckpt, json* meta_out = nullptr) {
  const auto meta = nn::read_checkpoint_meta(ckpt);
  if (!meta.contains("mae") || !meta.contains("tactile") || !meta.contains("input"))
    throw nn::CheckpointError(ckpt.string() + " is not a composed model checkpoint");
  nn::PtetModel model(nn::MaeConfig::from_json(meta["mae"]), nn::TactileAeConfig::from_json(meta["tactile"]),
                      meta.value("dropout", 0.5));
  nn::load_checkpoint(ckpt, *model);
  model->set_encoder_frozen(meta.value("encoder_frozen", false));
  if (meta_out) *meta_out = meta;
  return model;
}

std::vector<float> tensor_values(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat32).contiguous();
  return {c.data_ptr<float>(), c.data_ptr<float>() + c.numel()};
}

std::vector<int> id_values(const torch::Tensor& t) {
  auto c = t.to(torch::kInt32).contiguous();
  return {c.data_ptr<int>(), c.data_ptr<int>() + c.numel()};
}

eval::MetricReport evaluate_checkpoint(const Common& c, const fs::path& data, const fs::path& ckpt_arg,
                                       const std::string& split, bool noisy, std::optional<int> limit,
                                       std::vector<float>* preds_out, std::vector<float>* truth_out) {
  const auto ckpt = resolve_checkpoint(ckpt_arg);
  json meta;
  auto model = load_ptet(ckpt, &meta);
  const auto input = nn::InputEncoder::from_json(meta["input"]);
  auto s = nn::load_tensor_split(data, split, input, noisy);
  if (limit) s = s.head(std::min<int64_t>(*limit, s.size()));
  const auto preds = tensor_values(nn::predict_maps(model, input, s));
  const auto truth = tensor_values(s.maps);
  const auto ids = id_values(s.ids);
  json prov = {{"kind", "model"},
               {"checkpoint", ckpt.string()},
               {"parameter_hash", nn::parameter_hash(*model)},
               {"encoder_frozen", meta.value("encoder_frozen", false)},
               {"labels", meta.value("labels", json())},
               {"split", split},
               {"noisy", noisy},
               {"dataset", dataset_ref(data)}};
  if (meta.contains("run")) prov["run"] = meta["run"];
  const std::string label = meta.value("model_kind", std::string("model")) + ":" + ckpt.parent_path().filename().string();
  auto report = eval::evaluate_maps(label, preds, truth, ids, 48, prov);
  if (preds_out) *preds_out = preds;
  if (truth_out) *truth_out = truth;
  return report;
}

eval::MetricReport evaluate_tikhonov(const fs::path& data, const std::string& split, bool noisy, double rel_lambda,
                                     std::optional<int> limit, std::vector<float>* preds_out,
                                     std::vector<float>* truth_out) {
  const auto d = data::load_split(data, split);
  if (noisy && d.voltages_noisy.empty()) throw ConfigError("dataset has no noisy voltages");
  const int n = limit ? std::min(*limit, d.count) : d.count;
  const eval::TikhonovReconstructor tik(dataset_jacobian(data), rel_lambda);
  std::vector<float> preds, truth;
  preds.reserve(std::size_t(n) * 2304);
  for (int i = 0; i < n; ++i) {
    const auto v = d.voltage(i, noisy);
    const std::vector<double> dv(v.begin(), v.end());
    const auto map = tik.reconstruct(dv);
    preds.insert(preds.end(), map.values().begin(), map.values().end());
    const auto gt = d.map(i);
    truth.insert(truth.end(), gt.begin(), gt.end());
  }
  const std::vector<int> ids(d.ids.begin(), d.ids.begin() + 2 * n);
  json prov = {{"kind", "baseline"},
               {"baseline", "tikhonov"},
               {"relative_lambda", rel_lambda},
               {"lambda", tik.lambda()},
               {"split", split},
               {"noisy", noisy},
               {"dataset", dataset_ref(data)}};
  auto report = eval::evaluate_maps("baseline:tikhonov", preds, truth, ids, 48, prov);
  if (preds_out) *preds_out = std::move(preds);
  if (truth_out) *truth_out = std::move(truth);
  return report;
}

double number(const json& j) { return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

fs::path output_path(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / p;
  return p;
}

fs::path resolve_checkpoint(const fs::path& p) {
  const auto dir = output_path(p);
  if (fs::exists(dir / "meta.json")) return dir;
  if (fs::exists(dir / "best" / "meta.json")) return dir / "best";
  throw nn::CheckpointError("no checkpoint at " + dir.string());
}

json cmd_generate(const Common& c, const GenerateArgs& a) {
  if (a.samples <= 0) throw ConfigError("--samples must be positive");
  if (a.level < 1) throw ConfigError("--level must be >= 1");
  if (a.threads < 1) throw ConfigError("--threads must be >= 1");
  auto cfg = data::DatasetConfig::standard(1, seed_of(c));
  json base = cfg.to_json();
  base.merge_patch(block(c, "dataset"));
  cfg = data::DatasetConfig::from_json(base);
  cfg.seed = seed_of(c);
  cfg.refinement_level = a.level;
  const auto shape = data::parse_shape_class(a.shape);
  // Spread the requested total over the subsets, remainder to the first ones.
  const int k = static_cast<int>(cfg.subsets.size());
  if (k == 0) throw ConfigError("dataset: no subsets");
  for (int i = 0; i < k; ++i) {
    cfg.subsets[i].count = a.samples / k + (i < a.samples % k ? 1 : 0);
    cfg.subsets[i].shape = shape;
  }
  if (a.snr_db) cfg.noise.snr_db = *a.snr_db;
  cfg.output = output_path(a.out);
  cfg.threads = a.threads;
  const auto m = data::build_dataset(cfg);
  std::ostringstream s;
  s << "dataset " << cfg.output.string() << " samples " << m.sample_count << " train " << m.splits[0].count
    << " val " << m.splits[1].count << " test " << m.splits[2].count << " config " << m.config_hash;
  if (m.snr_db) s << " snr " << *m.snr_db << " dB";
  log(c, s.str());
  return m.to_json();
}

json cmd_pretrain_voltage(const Common& c, const PretrainArgs& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
  const auto data = dataset_dir(a.data);
  const auto mae_cfg = nn::MaeConfig::from_json(block(c, "mae"));
  const auto kind = nn::parse_input_kind(c.config.value("input", a.input));
  const auto train_cfg = train_config(c, "pretrain_voltage", nn::TrainConfig::voltage_pretraining(), a.epochs);
  const nn::InputEncoder input(nn::training_stats(data, a.noisy), kind);
  auto train = nn::load_tensor_split(data, "train", input, a.noisy);
  if (a.train_limit) train = train.head(std::min<int64_t>(*a.train_limit, train.size()));
  const auto val = nn::load_tensor_split(data, "val", input, a.noisy);

  torch::manual_seed(train_cfg.seed);
  nn::MaskedAutoencoder model(mae_cfg);
  const json effective = {{"mae", mae_cfg.to_json()},
                          {"train", train_cfg.to_json()},
                          {"input", nn::to_string(kind)},
                          {"noisy", a.noisy},
                          {"train_samples", train.size()}};
  nn::RunOptions opt;
  opt.train = train_cfg;
  opt.checkpoint_dir = output_path(a.out);
  opt.resume = a.resume;
  opt.meta = {{"model_kind", "voltage_mae"},
              {"run", provenance(c, "pretrain-voltage", effective)},
              {"dataset", dataset_ref(data)}};
  opt.on_epoch = epoch_logger(c, "pretrain-voltage");
  log(c, "pretrain-voltage: " + std::to_string(train.size()) + " frames, " +
             std::to_string(nn::count_parameters(*model)) + " parameters");
  const auto res = nn::pretrain_voltage(model, input, train, val, opt);
  const auto rec = nn::mae_reconstruction(model, input, val, mae_cfg.mask_ratio, train_cfg.seed);
  json summary = {{"result", res.to_json()},
                  {"val_reconstruction", {{"mask_ratio", mae_cfg.mask_ratio}, {"ssim", rec.ssim}, {"mse", rec.mse}}},
                  {"run", opt.meta["run"]}};
  write_json(output_path(a.out) / "summary.json", summary);
  std::ostringstream s;
  s << "pretrain-voltage: best epoch " << res.best_epoch << " val " << res.best_val << " masked ssim " << rec.ssim;
  log(c, s.str());
  return summary;
}

json cmd_pretrain_tactile(const Common& c, const PretrainArgs& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
  const auto data = dataset_dir(a.data);
  const auto tact_cfg = nn::TactileAeConfig::from_json(block(c, "tactile"));
  const auto train_cfg = train_config(c, "pretrain_tactile", nn::TrainConfig::tactile_pretraining(), a.epochs);
  // Maps do not depend on the voltage encoding; any encoder serves to load them.
  const nn::InputEncoder input(nn::training_stats(data), nn::InputKind::e2im);
  auto train = nn::load_tensor_split(data, "train", input);
  if (a.train_limit) train = train.head(std::min<int64_t>(*a.train_limit, train.size()));
  const auto val = nn::load_tensor_split(data, "val", input);

  torch::manual_seed(train_cfg.seed);
  nn::TactileAutoencoder model(tact_cfg);
  const json effective = {{"tactile", tact_cfg.to_json()}, {"train", train_cfg.to_json()}, {"train_samples", train.size()}};
  nn::RunOptions opt;
  opt.train = train_cfg;
  opt.checkpoint_dir = output_path(a.out);
  opt.resume = a.resume;
  opt.meta = {{"model_kind", "tactile_ae"},
              {"run", provenance(c, "pretrain-tactile", effective)},
              {"dataset", dataset_ref(data)}};
  opt.on_epoch = epoch_logger(c, "pretrain-tactile");
  log(c, "pretrain-tactile: " + std::to_string(train.size()) + " maps, " +
             std::to_string(nn::count_parameters(*model)) + " parameters");
  const auto res = nn::pretrain_tactile(model, train.maps, val.maps, opt);
  json summary = {{"result", res.to_json()}, {"run", opt.meta["run"]}};
  write_json(output_path(a.out) / "summary.json", summary);
  log(c, "pretrain-tactile: best epoch " + std::to_string(res.best_epoch) + " val " + std::to_string(res.best_val));
  return summary;
}

namespace {

json run_finetune(const Common& c, const FinetuneArgs& a, nn::PtetModel& model, const nn::InputEncoder& input,
                  const fs::path& data, const std::string& command, json refs) {
  if (a.out.empty()) throw ConfigError("--out is required");
  if (a.labels <= 0) throw ConfigError("--labels must be positive");
  const auto settings = ptet_settings(c);
  const bool supervised = command == "train-sl";
  const auto defaults = nn::TrainConfig::finetuning();
  auto train_cfg = train_config(c, "finetune", defaults, a.epochs);
  if (supervised && c.config.contains("train_sl")) train_cfg = train_config(c, "train_sl", train_cfg, a.epochs);

  const auto full = nn::load_tensor_split(data, "train", input, a.noisy);
  if (a.labels > full.size())
    throw ConfigError("--labels " + std::to_string(a.labels) + " exceeds the " + std::to_string(full.size()) +
                      " training pairs");
  const auto train = nn::label_subset(full, a.labels, train_cfg.seed);
  const auto val = nn::load_tensor_split(data, "val", input, a.noisy);

  nn::FinetuneOptions opt;
  opt.run.train = train_cfg;
  opt.run.checkpoint_dir = output_path(a.out);
  opt.run.resume = a.resume;
  opt.sensitivity_weight = settings.sensitivity_weight;
  if (settings.sensitivity_weight > 0) {
    const auto J = dataset_jacobian(data);
    auto jt = torch::from_blob(const_cast<double*>(J.data()), {J.cols(), J.rows()}, torch::kFloat64).t();
    opt.pixel_weights = nn::sensitivity_weights(jt.clone());
  }
  // Sources enter the hashed configuration by content; their paths are kept
  // next to it.
  json source_hashes = json::object();
  for (const auto& [name, ref] : refs.items()) source_hashes[name] = ref.at("parameter_hash");
  const json effective = {{"mae", model->mae_config().to_json()},
                          {"tactile", model->tactile_config().to_json()},
                          {"train", train_cfg.to_json()},
                          {"dropout", settings.dropout},
                          {"sensitivity_weight", settings.sensitivity_weight},
                          {"labels", a.labels},
                          {"noisy", a.noisy},
                          {"input", {{"kind", nn::to_string(input.kind())}, {"stats_hash", config_hash(input.to_json())}}},
                          {"sources", source_hashes}};
  opt.run.meta = {{"model_kind", supervised ? "ptet_sl" : "ptet"},
                  {"dropout", settings.dropout},
                  {"run", provenance(c, command, effective)},
                  {"dataset", dataset_ref(data)},
                  {"sources", refs}};
  opt.run.on_epoch = epoch_logger(c, command);
  log(c, command + ": " + std::to_string(train.size()) + " labelled pairs, " +
             std::to_string(nn::trainable_parameters(*model).size()) + " trainable tensors");
  const auto res = nn::finetune(model, input, train, val, opt);
  json summary = {{"result", res.train.to_json()},
                  {"encoder_hash_before", res.encoder_hash_before},
                  {"encoder_hash_after", res.encoder_hash_after},
                  {"run", opt.run.meta["run"]}};
  write_json(output_path(a.out) / "summary.json", summary);
  log(c, command + ": best epoch " + std::to_string(res.train.best_epoch) + " val " +
             std::to_string(res.train.best_val));
  return summary;
}

}  // namespace

json cmd_finetune(const Common& c, const FinetuneArgs& a) {
  if (a.voltage.empty() || a.tactile.empty()) throw ConfigError("--voltage and --tactile checkpoints are required");
  const auto data = dataset_dir(a.data);
  const auto vckpt = resolve_checkpoint(a.voltage);
  const auto tckpt = resolve_checkpoint(a.tactile);
  const auto vmeta = nn::read_checkpoint_meta(vckpt);
  if (!vmeta.contains("input")) throw nn::CheckpointError(vckpt.string() + " has no input encoding");
  // The encoder only understands inputs standardised as during pretraining.
  const auto input = nn::InputEncoder::from_json(vmeta["input"]);
  auto model = nn::assemble(vckpt, tckpt, ptet_settings(c).dropout, seed_of(c));
  json refs = {{"voltage", {{"path", vckpt.string()}, {"parameter_hash", nn::read_checkpoint_meta(vckpt).value("parameter_hash", "")}}},
               {"tactile", {{"path", tckpt.string()}, {"parameter_hash", nn::read_checkpoint_meta(tckpt).value("parameter_hash", "")}}}};
  return run_finetune(c, a, model, input, data, "finetune", refs);
}

json cmd_train_sl(const Common& c, const FinetuneArgs& a) {
  const auto data = dataset_dir(a.data);
  auto mae_cfg = nn::MaeConfig::from_json(block(c, "mae"));
  std::optional<nn::InputEncoder> input;
  if (!a.architecture_from.empty()) {
    const auto meta = nn::read_checkpoint_meta(resolve_checkpoint(a.architecture_from));
    mae_cfg = nn::MaeConfig::from_json(meta.at("mae"));
    input = nn::InputEncoder::from_json(meta.at("input"));
  } else {
    const auto kind = nn::parse_input_kind(c.config.value("input", std::string("e2im")));
    input = nn::InputEncoder(nn::training_stats(data, a.noisy), kind);
  }
  const auto tact_cfg = nn::TactileAeConfig::from_json(block(c, "tactile"));
  torch::manual_seed(seed_of(c));
  nn::PtetModel model(mae_cfg, tact_cfg, ptet_settings(c).dropout);
  return run_finetune(c, a, model, *input, data, "train-sl", json::object());
}

json cmd_evaluate(const Common& c, const EvaluateArgs& a) {
  const auto data = dataset_dir(a.data);
  const auto settings = eval_settings(c);
  const int panels = a.panels >= 0 ? a.panels : settings.panels;
  const auto out = output_path(a.out);
  if (a.split != "train" && a.split != "val" && a.split != "test") throw ConfigError("--split must be train|val|test");
  const bool baseline = !a.baseline.empty();
  if (baseline && a.baseline != "tikhonov") throw ConfigError("unknown baseline '" + a.baseline + "'");
  const std::size_t sources = a.models.size() + (baseline ? 1 : 0);
  if (a.compare ? sources != 2 : sources != 1)
    throw ConfigError(a.compare ? "--compare needs exactly two sources" : "evaluate needs one --model or --baseline");

  std::vector<eval::MetricReport> reports;
  std::vector<std::string> names;
  auto run_one = [&](const eval::MetricReport& r, const std::vector<float>& p, const std::vector<float>& t,
                     const fs::path& dir) {
    eval::write_report(r, dir, p, t, 48, panels);
    reports.push_back(r);
  };
  for (std::size_t i = 0; i < a.models.size(); ++i) {
    std::vector<float> p, t;
    auto r = evaluate_checkpoint(c, data, a.models[i], a.split, a.noisy, a.limit, &p, &t);
    const fs::path dir = a.compare ? out / (i == 0 ? "a" : "b") : out;
    run_one(r, p, t, dir);
  }
  if (baseline) {
    std::vector<float> p, t;
    auto r = evaluate_tikhonov(data, a.split, a.noisy, settings.tikhonov_lambda, a.limit, &p, &t);
    run_one(r, p, t, a.compare ? out / "b" : out);
  }
  for (const auto& r : reports) {
    const auto& m = r.summary;
    std::ostringstream s;
    s << std::setprecision(6) << r.label << ": mse " << m.mse << " ssim " << m.ssim << " psnr " << m.psnr << " cc "
      << m.cc << " re " << m.re << " (n " << r.summary.count << ")";
    log(c, s.str());
  }
  if (!a.compare) return reports[0].to_json();
  json cmp = eval::compare_reports(reports[0], reports[1]);
  write_json(out / "compare.json", cmp);
  log(c, "delta (b - a): " + cmp["delta"].dump());
  return cmp;
}

json cmd_sweep(const Common& c, const SweepArgs& a) {
  if (a.labels.empty()) throw ConfigError("--labels is empty");
  const auto out = output_path(a.out);
  json rows = json::array();
  std::ofstream csv;
  fs::create_directories(out);
  csv.open(out / "sweep.csv");
  csv << "labels,model,test_mse,test_ssim,test_psnr,test_cc,test_re,best_epoch,best_val\n";
  csv << std::setprecision(10);
  for (const int n : a.labels) {
    json row = {{"labels", n}};
    for (const std::string kind : {"ptet", "ptet_sl"}) {
      FinetuneArgs f;
      f.data = a.data;
      f.voltage = a.voltage;
      f.tactile = a.tactile;
      f.labels = n;
      f.epochs = a.epochs;
      f.out = out / (kind + "_" + std::to_string(n));
      f.architecture_from = a.voltage;
      const auto res = kind == "ptet" ? cmd_finetune(c, f) : cmd_train_sl(c, f);
      EvaluateArgs e;
      e.data = a.data;
      e.models = {f.out};
      e.out = f.out / "report";
      e.panels = 0;
      const auto rep = cmd_evaluate(c, e);
      const auto& m = rep.at("summary");
      csv << n << ',' << kind << ',' << number(m.at("MSE")) << ',' << number(m.at("SSIM")) << ','
          << number(m.at("PSNR")) << ',' << number(m.at("CC")) << ',' << number(m.at("RE")) << ','
          << res.at("result").at("best_epoch").get<int>() << ',' << res.at("result").at("best_val").get<double>()
          << '\n';
      row[kind] = rep.at("summary");
    }
    row["mse_gap"] = number(row["ptet_sl"]["MSE"]) - number(row["ptet"]["MSE"]);
    rows.push_back(row);
  }
  if (!csv) throw std::ios_base::failure("cannot write " + (out / "sweep.csv").string());
  json result = {{"rows", rows}, {"run", provenance(c, "sweep", {{"labels", a.labels}})}};
  write_json(out / "sweep.json", result);
  return result;
}

int run(int argc, char** argv) {
  CLI::App app{"Pretrained EIT tactile reconstruction toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  std::string device = "cpu";
  std::string config_path;
  bool quiet = false;
  app.add_option("--seed", seed, "Global seed (overrides the config file)");
  app.add_option("--device", device, "Compute device; only cpu is supported");
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_flag("-q,--quiet", quiet, "Suppress progress lines");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Simulate a phantom dataset");
  g->add_option("--samples", gen.samples, "Total samples over all touch-count subsets");
  g->add_option("--noise-snr", gen.snr_db, "Also write noisy voltages at this SNR (dB)");
  g->add_option("--out", gen.out, "Dataset directory");
  g->add_option("--level", gen.level, "Mesh refinement level");
  g->add_option("--threads", gen.threads, "Worker threads");
  g->add_option("--shape", gen.shape, "Touch shape class: circular | annular | l_shape");

  PretrainArgs pv, pt;
  auto* v = app.add_subcommand("pretrain-voltage", "Masked autoencoder pretraining on voltage images");
  auto* t = app.add_subcommand("pretrain-tactile", "Tactile map autoencoder pretraining");
  for (auto [cmd, args] : {std::pair{v, &pv}, std::pair{t, &pt}}) {
    cmd->add_option("--data", args->data, "Dataset directory")->required();
    cmd->add_option("--out", args->out, "Run directory (best/ and last/ checkpoints)")->required();
    cmd->add_option("--epochs", args->epochs, "Override the epoch budget");
    cmd->add_option("--train-limit", args->train_limit, "Use only the first N training samples");
    cmd->add_flag("--resume", args->resume, "Continue from the run directory's last checkpoint");
  }
  v->add_option("--input", pv.input, "Input encoding: e2im | eim | e2im_patch");
  v->add_flag("--noisy", pv.noisy, "Pretrain on the noisy voltages");

  FinetuneArgs ft, sl;
  auto* f = app.add_subcommand("finetune", "Fine-tune the composed model with a frozen voltage encoder");
  auto* s = app.add_subcommand("train-sl", "Train the same architecture fully supervised from scratch");
  for (auto [cmd, args] : {std::pair{f, &ft}, std::pair{s, &sl}}) {
    cmd->add_option("--data", args->data, "Dataset directory")->required();
    cmd->add_option("--out", args->out, "Run directory")->required();
    cmd->add_option("--labels", args->labels, "Number of labelled training pairs");
    cmd->add_option("--epochs", args->epochs, "Override the epoch budget");
    cmd->add_flag("--noisy", args->noisy, "Train on the noisy voltages");
    cmd->add_flag("--resume", args->resume, "Continue from the run directory's last checkpoint");
  }
  f->add_option("--voltage", ft.voltage, "Voltage pretraining run or checkpoint")->required();
  f->add_option("--tactile", ft.tactile, "Tactile pretraining run or checkpoint")->required();
  s->add_option("--architecture-from", sl.architecture_from, "Take encoder settings and input encoding from this run");

  EvaluateArgs ev;
  ev.panels = -1;
  std::vector<std::string> compare;
  auto* e = app.add_subcommand("evaluate", "Score a model or baseline on a dataset split");
  e->add_option("--data", ev.data, "Dataset directory")->required();
  auto* model_opt = e->add_option("--model", ev.models, "Composed model run or checkpoint");
  e->add_option("--baseline", ev.baseline, "Baseline method: tikhonov");
  e->add_option("--compare", compare, "Two sources to compare; 'tikhonov' names the baseline")->expected(2)->excludes(model_opt);
  e->add_option("--split", ev.split, "train | val | test");
  e->add_flag("--noisy", ev.noisy, "Use the noisy voltages");
  e->add_option("--out", ev.out, "Report directory");
  e->add_option("--panels", ev.panels, "Number of PNG panels");
  e->add_option("--limit", ev.limit, "Score only the first N samples");

  SweepArgs sw;
  std::string labels_csv;
  auto* w = app.add_subcommand("sweep", "Fine-tuned and supervised models over label budgets");
  w->add_option("--data", sw.data, "Dataset directory")->required();
  w->add_option("--voltage", sw.voltage, "Voltage pretraining run or checkpoint")->required();
  w->add_option("--tactile", sw.tactile, "Tactile pretraining run or checkpoint")->required();
  w->add_option("--labels", labels_csv, "Comma-separated label budgets");
  w->add_option("--out", sw.out, "Sweep directory");
  w->add_option("--epochs", sw.epochs, "Override the epoch budget");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    Common c;
    c.quiet = quiet;
    c.device = device;
    if (device != "cpu") throw ConfigError("device '" + device + "' is not available; only cpu is supported");
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot read config " + config_path);
      c.config = json::parse(in);
      if (!c.config.is_object()) throw ConfigError("config must be a JSON object");
      for (const auto& [key, _] : c.config.items())
        if (std::find(kConfigBlocks.begin(), kConfigBlocks.end(), key) == kConfigBlocks.end())
          throw ConfigError("unknown config block '" + key + "'");
    }
    c.seed = seed ? *seed : c.config.value("seed", std::uint64_t{0});

    if (*g) cmd_generate(c, gen);
    else if (*v) cmd_pretrain_voltage(c, pv);
    else if (*t) cmd_pretrain_tactile(c, pt);
    else if (*f) cmd_finetune(c, ft);
    else if (*s) cmd_train_sl(c, sl);
    else if (*e) {
      if (!compare.empty()) {
        ev.compare = true;
        for (const auto& src : compare) {
          if (src == "tikhonov") ev.baseline = src;
          else ev.models.push_back(src);
        }
        // Keep the order given on the command line for a model-vs-baseline pair.
        if (ev.models.size() == 1 && compare[0] == "tikhonov")
          throw ConfigError("--compare: list the model first and the tikhonov baseline second");
      }
      cmd_evaluate(c, ev);
    } else if (*w) {
      if (!labels_csv.empty()) {
        sw.labels.clear();
        std::stringstream ss(labels_csv);
        for (std::string item; std::getline(ss, item, ',');) {
          try {
            sw.labels.push_back(std::stoi(item));
          } catch (const std::exception&) {
            throw ConfigError("--labels: '" + item + "' is not an integer");
          }
        }
      }
      cmd_sweep(c, sw);
    }
    return kExitOk;
  } catch (const nn::TrainingDiverged& err) {
    std::cerr << "error: training diverged: " << err.what() << "\n";
    return kExitDiverged;
  } catch (const nn::CheckpointError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  } catch (const data::DatasetIoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  } catch (const std::ios_base::failure& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitIo;
  } catch (const json::exception& err) {
    std::cerr << "error: configuration: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: configuration: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
}

}  // namespace ptet::cli

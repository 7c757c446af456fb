#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "ptet/cli/commands.hpp"
#include "ptet/nn/pipelines.hpp"

#include "doctest.h"

using namespace ptet;
using namespace ptet::cli;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path& root() {
  static const fs::path r = [] {
    auto p = fs::temp_directory_path() / ("ptet_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return r;
}

json tiny_config() {
  return json::parse(R"({
    "mae": {"embed_dim": 32, "encoder_layers": 1, "decoder_layers": 1, "decoder_embed_dim": 32, "heads": 2},
    "tactile": {"channels": [8, 16, 32], "res_layers": 1, "attention_dim": 16, "groups": 4},
    "pretrain_voltage": {"epochs": 2, "warmup_epochs": 1, "batch_size": 32},
    "pretrain_tactile": {"epochs": 2, "warmup_epochs": 1, "batch_size": 32},
    "finetune": {"epochs": 2, "warmup_epochs": 1, "batch_size": 32, "lr": 1e-3},
    "eval": {"panels": 2}
  })");
}

Common common(std::uint64_t seed = 0) {
  Common c;
  c.seed = seed;
  c.config = tiny_config();
  c.quiet = true;
  return c;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> bytes for every regular file under dir.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
  return out;
}

int run_args(std::vector<std::string> args) {
  args.insert(args.begin(), "ptet");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

// Small noisy dataset plus pretrained runs shared by the pipeline cases.
struct Pipeline {
  fs::path data = root() / "ds";
  fs::path vol = root() / "vol";
  fs::path tact = root() / "tact";
  std::map<std::string, std::string> data_bytes;

  Pipeline() {
    GenerateArgs g;
    g.samples = 500;
    g.level = 4;
    g.snr_db = 50.0;
    g.out = data;
    cmd_generate(common(7), g);
    data_bytes = tree(data);
    PretrainArgs p;
    p.data = data;
    p.out = vol;
    cmd_pretrain_voltage(common(), p);
    p.out = tact;
    cmd_pretrain_tactile(common(), p);
  }
};

const Pipeline& pipeline() {
  static const Pipeline p;
  return p;
}

FinetuneArgs finetune_args(const fs::path& out, int labels = 200) {
  FinetuneArgs f;
  f.data = pipeline().data;
  f.voltage = pipeline().vol;
  f.tactile = pipeline().tact;
  f.labels = labels;
  f.out = out;
  return f;
}

json evaluate_one(const fs::path& model, const fs::path& out) {
  EvaluateArgs e;
  e.data = pipeline().data;
  e.models = {model};
  e.out = out;
  return cmd_evaluate(common(), e);
}

}  // namespace

TEST_CASE("generate splits 18:1:1 and reruns byte-identically") {
  const auto a = root() / "gen_a", b = root() / "gen_b";
  REQUIRE(run_args({"--seed", "7", "-q", "generate", "--samples", "5000", "--level", "2", "--out", a.string()}) ==
          kExitOk);
  const auto m = json::parse(read_bytes(a / "manifest.json"));
  CHECK(m["sample_count"] == 5000);
  CHECK(m["splits"]["train"]["count"] == 4500);
  CHECK(m["splits"]["val"]["count"] == 250);
  CHECK(m["splits"]["test"]["count"] == 250);
  CHECK(m["seed"] == 7);
  REQUIRE(run_args({"--seed", "7", "-q", "generate", "--samples", "5000", "--level", "2", "--out", b.string()}) ==
          kExitOk);
  CHECK(tree(a) == tree(b));
  // Refuses to overwrite an existing dataset.
  CHECK(run_args({"--seed", "7", "-q", "generate", "--samples", "5000", "--level", "2", "--out", a.string()}) ==
        kExitIo);
}

TEST_CASE("noisy generation keeps the clean labels") {
  const auto clean = root() / "gen_clean", noisy = root() / "gen_noisy";
  GenerateArgs g;
  g.samples = 100;
  g.level = 2;
  g.out = clean;
  cmd_generate(common(3), g);
  g.out = noisy;
  g.snr_db = 50.0;
  const auto m = cmd_generate(common(3), g);
  CHECK(m["noise"]["snr_db"] == 50.0);
  for (const std::string split : {"train", "val", "test"}) {
    CHECK(fs::exists(noisy / split / "voltages_noisy.bin"));
    CHECK(read_bytes(clean / split / "maps.bin") == read_bytes(noisy / split / "maps.bin"));
    CHECK(read_bytes(clean / split / "voltages.bin") == read_bytes(noisy / split / "voltages.bin"));
    CHECK(read_bytes(noisy / split / "voltages.bin") != read_bytes(noisy / split / "voltages_noisy.bin"));
  }
}

TEST_CASE("finetune then evaluate produces a report") {
  const auto run_dir = root() / "ft";
  const auto s = cmd_finetune(common(), finetune_args(run_dir));
  CHECK(s["encoder_hash_before"] == s["encoder_hash_after"]);
  CHECK(fs::exists(run_dir / "best" / "model.pt"));
  CHECK(fs::exists(run_dir / "last" / "optimizer.pt"));
  const auto meta = json::parse(read_bytes(run_dir / "best" / "meta.json"));
  CHECK(meta["encoder_frozen"] == true);
  CHECK(meta["labels"] == 200);
  CHECK(meta["run"]["seed"] == 0);
  CHECK(meta["run"]["config_hash"].get<std::string>().size() == 16);
  CHECK(meta["sources"]["voltage"]["path"] == (pipeline().vol / "best").string());

  const auto rep = evaluate_one(run_dir, root() / "ft_report");
  CHECK(rep["count"] == 25);
  CHECK(rep["provenance"]["kind"] == "model");
  CHECK(rep["provenance"]["checkpoint"] == (run_dir / "best").string());
  CHECK(fs::exists(root() / "ft_report" / "report.json"));
  CHECK(fs::exists(root() / "ft_report" / "metrics.csv"));
  CHECK(fs::exists(root() / "ft_report" / "panels" / "panel_001.png"));
  CHECK_FALSE(fs::exists(root() / "ft_report" / "panels" / "panel_002.png"));
}

TEST_CASE("identical commands give identical checkpoints") {
  const auto a = root() / "rep_a", b = root() / "rep_b";
  cmd_finetune(common(), finetune_args(a));
  cmd_finetune(common(), finetune_args(b));
  CHECK(read_bytes(a / "best" / "model.pt") == read_bytes(b / "best" / "model.pt"));
  CHECK(read_bytes(a / "last" / "optimizer.pt") == read_bytes(b / "last" / "optimizer.pt"));
  const auto sl_a = root() / "sl_a", sl_b = root() / "sl_b";
  cmd_train_sl(common(), finetune_args(sl_a));
  cmd_train_sl(common(), finetune_args(sl_b));
  CHECK(read_bytes(sl_a / "best" / "model.pt") == read_bytes(sl_b / "best" / "model.pt"));
}

TEST_CASE("resume after an interruption continues the same loss curve") {
  auto c = common();
  c.config["finetune"]["epochs"] = 4;
  const auto full = root() / "resume_full", cut = root() / "resume_cut";
  const auto reference = cmd_finetune(c, finetune_args(full));

  auto interrupted = c;
  interrupted.on_epoch = [](int epoch, double, double) {
    if (epoch == 2) throw std::runtime_error("interrupted");
  };
  CHECK_THROWS_WITH(cmd_finetune(interrupted, finetune_args(cut)), "interrupted");
  CHECK(json::parse(read_bytes(cut / "last" / "meta.json"))["epoch"] == 1);

  auto args = finetune_args(cut);
  args.resume = true;
  const auto resumed = cmd_finetune(c, args);
  CHECK(resumed["result"]["history"] == reference["result"]["history"]);
  CHECK(read_bytes(cut / "last" / "model.pt") == read_bytes(full / "last" / "model.pt"));
  CHECK(read_bytes(cut / "best" / "model.pt") == read_bytes(full / "best" / "model.pt"));
}

TEST_CASE("tikhonov baseline report carries baseline provenance") {
  EvaluateArgs e;
  e.data = pipeline().data;
  e.baseline = "tikhonov";
  e.out = root() / "tik";
  const auto rep = cmd_evaluate(common(), e);
  CHECK(rep["label"] == "baseline:tikhonov");
  CHECK(rep["provenance"]["kind"] == "baseline");
  CHECK(rep["provenance"]["baseline"] == "tikhonov");
  CHECK(rep["provenance"]["relative_lambda"] == 1e-2);
  CHECK(rep["count"] == 25);
}

TEST_CASE("compare reports the difference of the individual reports") {
  const auto a = root() / "cmp_ft", b = root() / "cmp_sl";
  cmd_finetune(common(), finetune_args(a));
  cmd_train_sl(common(), finetune_args(b));
  const auto ra = evaluate_one(a, root() / "cmp_ra");
  const auto rb = evaluate_one(b, root() / "cmp_rb");
  EvaluateArgs e;
  e.data = pipeline().data;
  e.models = {a, b};
  e.compare = true;
  e.out = root() / "cmp";
  const auto cmp = cmd_evaluate(common(), e);
  for (const std::string key : {"MSE", "SSIM", "PSNR", "CC", "RE"})
    CHECK(cmp["delta"][key].get<double>() ==
          doctest::Approx(rb["summary"][key].get<double>() - ra["summary"][key].get<double>()).epsilon(1e-12));
  CHECK(fs::exists(root() / "cmp" / "compare.json"));
  CHECK(fs::exists(root() / "cmp" / "a" / "report.json"));
  CHECK(fs::exists(root() / "cmp" / "b" / "report.json"));
}

TEST_CASE("an untrained model scores worse than a trained one") {
  const auto trained = root() / "trained";
  auto c = common();
  c.config["finetune"]["epochs"] = 8;
  cmd_finetune(c, finetune_args(trained, 450));

  // Same architecture and input encoding, initial weights only.
  const auto meta = json::parse(read_bytes(trained / "best" / "meta.json"));
  torch::manual_seed(11);
  nn::PtetModel untrained(nn::MaeConfig::from_json(meta["mae"]), nn::TactileAeConfig::from_json(meta["tactile"]));
  json m = {{"mae", meta["mae"]}, {"tactile", meta["tactile"]}, {"input", meta["input"]}, {"model_kind", "untrained"}};
  nn::save_checkpoint(root() / "untrained", *untrained, nullptr, m);

  const auto good = evaluate_one(trained, root() / "trained_report")["summary"];
  const auto bad = evaluate_one(root() / "untrained", root() / "untrained_report")["summary"];
  CHECK(bad["MSE"].get<double>() > good["MSE"].get<double>());
  CHECK(bad["PSNR"].get<double>() < good["PSNR"].get<double>());
  CHECK(bad["SSIM"].get<double>() < good["SSIM"].get<double>());
  CHECK(bad["RE"].get<double>() > good["RE"].get<double>());
}

TEST_CASE("sweep writes a curve for both models") {
  SweepArgs s;
  s.data = pipeline().data;
  s.voltage = pipeline().vol;
  s.tactile = pipeline().tact;
  s.labels = {50, 200};
  s.out = root() / "sweep";
  const auto res = cmd_sweep(common(), s);
  std::ifstream in(root() / "sweep" / "sweep.csv");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "labels,model,test_mse,test_ssim,test_psnr,test_cc,test_re,best_epoch,best_val");
  CHECK(lines[1].rfind("50,ptet,", 0) == 0);
  CHECK(lines[2].rfind("50,ptet_sl,", 0) == 0);
  CHECK(lines[3].rfind("200,ptet,", 0) == 0);
  CHECK(lines[4].rfind("200,ptet_sl,", 0) == 0);
  REQUIRE(res["rows"].size() == 2);
  for (const auto& row : res["rows"])
    CHECK(row["mse_gap"].get<double>() ==
          doctest::Approx(row["ptet_sl"]["MSE"].get<double>() - row["ptet"]["MSE"].get<double>()));
}

TEST_CASE("commands leave the dataset untouched") {
  cmd_finetune(common(), finetune_args(root() / "untouched"));
  CHECK(tree(pipeline().data) == pipeline().data_bytes);
}

TEST_CASE("exit codes") {
  const auto data = pipeline().data.string();
  CHECK(run_args({"--device", "cuda", "generate", "--out", (root() / "never").string()}) == kExitConfig);
  CHECK_FALSE(fs::exists(root() / "never"));
  CHECK(run_args({"-q", "evaluate", "--data", (root() / "missing").string(), "--baseline", "tikhonov"}) == kExitIo);
  CHECK(run_args({"-q", "evaluate", "--data", data, "--model", (root() / "missing").string()}) == kExitIo);
  CHECK(run_args({"-q", "evaluate", "--data", data, "--baseline", "fista"}) == kExitConfig);
  CHECK(run_args({"-q", "sweep", "--data", data, "--voltage", "v", "--tactile", "t", "--labels", "5,x"}) ==
        kExitConfig);
  CHECK(run_args({"-q", "finetune", "--data", data, "--voltage", pipeline().vol.string(), "--tactile",
                  pipeline().tact.string(), "--labels", "100000", "--out", (root() / "too_many").string()}) ==
        kExitConfig);
  CHECK(run_args({"no-such-command"}) == kExitConfig);

  const auto write_config = [](const fs::path& p, const json& j) {
    std::ofstream(p) << j.dump();
    return p.string();
  };
  auto unknown = tiny_config();
  unknown["optimiser"] = json::object();
  CHECK(run_args({"--config", write_config(root() / "unknown.json", unknown), "-q", "train-sl", "--data", data,
                  "--out", (root() / "x").string()}) == kExitConfig);
  auto bad_key = tiny_config();
  bad_key["finetune"]["learning_rate"] = 1.0;
  CHECK(run_args({"--config", write_config(root() / "bad_key.json", bad_key), "-q", "train-sl", "--data", data,
                  "--out", (root() / "y").string()}) == kExitConfig);
  auto explode = tiny_config();
  explode["finetune"]["lr"] = 1e30;
  explode["finetune"]["warmup_epochs"] = 0;
  CHECK(run_args({"--config", write_config(root() / "explode.json", explode), "-q", "train-sl", "--data", data,
                  "--labels", "100", "--out", (root() / "diverged").string()}) == kExitDiverged);
}

TEST_CASE("relative paths resolve under the output root") {
  pipeline();
  ::setenv(kOutputRootEnv, root().c_str(), 1);
  CHECK(output_path("runs/a") == root() / "runs/a");
  CHECK(output_path("/abs/b") == fs::path("/abs/b"));
  CHECK(resolve_checkpoint("vol") == root() / "vol" / "best");
  CHECK(resolve_checkpoint("vol/last") == root() / "vol" / "last");
  ::unsetenv(kOutputRootEnv);
  CHECK(output_path("runs/a") == fs::path("runs/a"));
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace ptet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDiverged = 3;
inline constexpr int kExitIo = 4;

inline constexpr const char* kOutputRootEnv = "PTET_OUTPUT_ROOT";

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Options shared by every command. `config` holds the parsed --config file
// (or an empty object); explicit flags are merged over it by each command.
struct Common {
  std::uint64_t seed = 0;
  std::string device = "cpu";
  nlohmann::json config = nlohmann::json::object();
  bool quiet = false;
  // Called after every training epoch; an exception aborts the run with the
  // last checkpoint intact.
  std::function<void(int epoch, double train_loss, double val_loss)> on_epoch;
};

// Relative paths land under $PTET_OUTPUT_ROOT when it is set.
std::filesystem::path output_path(const std::filesystem::path& p);

// A run directory holding best/ and last/, or a checkpoint directory itself.
std::filesystem::path resolve_checkpoint(const std::filesystem::path& p);

struct GenerateArgs {
  int samples = 25000;  // spread evenly over the touch-count subsets
  std::optional<double> snr_db;
  std::filesystem::path out = "data";
  int level = 12;
  int threads = 1;
  std::string shape = "circular";
};
nlohmann::json cmd_generate(const Common& c, const GenerateArgs& a);

struct PretrainArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<int> epochs;
  std::optional<int> train_limit;
  std::string input = "e2im";
  bool noisy = false;
  bool resume = false;
};
nlohmann::json cmd_pretrain_voltage(const Common& c, const PretrainArgs& a);
nlohmann::json cmd_pretrain_tactile(const Common& c, const PretrainArgs& a);

struct FinetuneArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  std::filesystem::path voltage;  // finetune only
  std::filesystem::path tactile;  // finetune only
  int labels = 2500;
  std::optional<int> epochs;
  bool noisy = false;
  bool resume = false;
  // Supervised comparator settings, taken from a voltage checkpoint when set.
  std::filesystem::path architecture_from;
};
nlohmann::json cmd_finetune(const Common& c, const FinetuneArgs& a);
nlohmann::json cmd_train_sl(const Common& c, const FinetuneArgs& a);

struct EvaluateArgs {
  std::filesystem::path data;
  std::vector<std::filesystem::path> models;  // one, or two with compare
  std::string baseline;                       // "" or "tikhonov"
  std::string split = "test";
  bool noisy = false;
  bool compare = false;
  std::filesystem::path out = "report";
  int panels = -1;  // < 0: eval.panels from the config, else 8
  std::optional<int> limit;
};
nlohmann::json cmd_evaluate(const Common& c, const EvaluateArgs& a);

struct SweepArgs {
  std::filesystem::path data;
  std::filesystem::path voltage;
  std::filesystem::path tactile;
  std::vector<int> labels{500, 2500, 10000};
  std::filesystem::path out = "sweep";
  std::optional<int> epochs;
};
nlohmann::json cmd_sweep(const Common& c, const SweepArgs& a);

// Parses argv, dispatches, maps failures onto exit codes.
int run(int argc, char** argv);

}  // namespace ptet::cli

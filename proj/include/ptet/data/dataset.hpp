#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "ptet/data/phantom.hpp"

namespace ptet::data {

inline constexpr const char* kGeneratorVersion = "ptet-datagen/1";
inline const std::array<std::string, 3> kSplitNames{"train", "val", "test"};

class DatasetIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SubsetSpec {
  ShapeClass shape = ShapeClass::circular;
  int touches = 1;
  int count = 0;
};

struct DatasetConfig {
  std::vector<SubsetSpec> subsets;  // default: 1..5 circular touches
  std::uint64_t seed = 0;
  NoiseSpec noise;
  std::filesystem::path output;
  int refinement_level = 12;
  std::array<int, 3> split_ratio{18, 1, 1};
  double contact_impedance = 1e-2;
  double current = 1e-3;
  int threads = 1;

  // `per_subset` samples for each of the 1..5 touch subsets.
  static DatasetConfig standard(int per_subset, std::uint64_t seed);
  nlohmann::json to_json() const;  // excludes output path and thread count
  static DatasetConfig from_json(const nlohmann::json& j);
};

// Deterministic split of n samples by ratio: the minority splits take
// round(n * r / total), train takes the rest.
std::array<int, 3> split_counts(int n, const std::array<int, 3>& ratio);

struct SplitInfo {
  int count = 0;
  std::vector<std::string> files;
};

struct DatasetManifest {
  nlohmann::json config;
  std::string config_hash;
  std::string generator_version;
  std::uint64_t seed = 0;
  int sample_count = 0;
  std::array<int, 3> split_ratio{};
  std::optional<double> snr_db;
  std::array<SplitInfo, 3> splits;
  std::vector<double> reference_frame;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

// Writes manifest.json and per-split voltages.bin / maps.bin / ids.bin (plus
// voltages_noisy.bin when noise is requested) under config.output. The tree
// is assembled in a sibling staging directory and renamed into place, so a
// failure leaves no partial dataset behind. Refuses to overwrite.
DatasetManifest build_dataset(const DatasetConfig& config);

DatasetManifest read_manifest(const std::filesystem::path& dir);

// One split held in memory. voltages: count x 104, maps: count x 48 x 48,
// ids: count x 2 (subset, index within subset).
struct SplitData {
  int count = 0;
  std::vector<float> voltages;
  std::vector<float> voltages_noisy;
  std::vector<float> maps;
  std::vector<std::int32_t> ids;

  std::span<const float> voltage(int i, bool noisy = false) const;
  std::span<const float> map(int i) const;
};

SplitData load_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace ptet::data

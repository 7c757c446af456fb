#include "ptet/data/dataset.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include "ptet/core/array_io.hpp"
#include "ptet/core/hash.hpp"

namespace fs = std::filesystem;

namespace ptet::data {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, int subset, int index, int purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(subset), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(purpose)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void validate(const DatasetConfig& c) {
  if (c.subsets.empty()) throw std::invalid_argument("dataset config has no subsets");
  for (const auto& s : c.subsets) {
    if (s.count < 0) throw std::invalid_argument("subset count must be non-negative");
    if (s.touches < 1) throw std::invalid_argument("subset touches must be >= 1");
  }
  if (c.refinement_level < 1) throw std::invalid_argument("refinement_level must be >= 1");
  for (int r : c.split_ratio)
    if (r < 0) throw std::invalid_argument("split ratios must be non-negative");
  if (c.split_ratio[0] + c.split_ratio[1] + c.split_ratio[2] <= 0)
    throw std::invalid_argument("split ratio sums to zero");
  if (c.noise.snr_db && !std::isfinite(*c.noise.snr_db)) throw std::invalid_argument("SNR must be finite");
  if (c.output.empty()) throw std::invalid_argument("dataset output path is empty");
}

}  // namespace

DatasetConfig DatasetConfig::standard(int per_subset, std::uint64_t seed) {
  DatasetConfig c;
  c.seed = seed;
  for (int t = 1; t <= kMaxTouches; ++t) c.subsets.push_back({ShapeClass::circular, t, per_subset});
  return c;
}

nlohmann::json DatasetConfig::to_json() const {
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& s : subsets)
    subs.push_back({{"shape", std::string(to_string(s.shape))}, {"touches", s.touches}, {"count", s.count}});
  return {{"subsets", subs},
          {"seed", seed},
          {"snr_db", noise.snr_db ? nlohmann::json(*noise.snr_db) : nlohmann::json(nullptr)},
          {"refinement_level", refinement_level},
          {"split_ratio", split_ratio},
          {"contact_impedance", contact_impedance},
          {"current", current}};
}

DatasetConfig DatasetConfig::from_json(const nlohmann::json& j) {
  DatasetConfig c;
  for (const auto& s : j.at("subsets"))
    c.subsets.push_back({parse_shape_class(s.value("shape", "circular")), s.at("touches").get<int>(),
                         s.at("count").get<int>()});
  c.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("snr_db") && !j.at("snr_db").is_null()) c.noise.snr_db = j.at("snr_db").get<double>();
  c.refinement_level = j.value("refinement_level", 12);
  if (j.contains("split_ratio")) c.split_ratio = j.at("split_ratio").get<std::array<int, 3>>();
  c.contact_impedance = j.value("contact_impedance", 1e-2);
  c.current = j.value("current", 1e-3);
  return c;
}

std::array<int, 3> split_counts(int n, const std::array<int, 3>& ratio) {
  const double total = ratio[0] + ratio[1] + ratio[2];
  const int val = static_cast<int>(std::lround(n * ratio[1] / total));
  const int test = static_cast<int>(std::lround(n * ratio[2] / total));
  return {n - val - test, val, test};
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json splits_json = nlohmann::json::object();
  for (int s = 0; s < 3; ++s)
    splits_json[kSplitNames[s]] = {{"count", splits[s].count}, {"files", splits[s].files}};
  return {{"generator_version", generator_version},
          {"config", config},
          {"config_hash", config_hash},
          {"seed", seed},
          {"sample_count", sample_count},
          {"split_ratio", split_ratio},
          {"noise", snr_db ? nlohmann::json{{"snr_db", *snr_db}} : nlohmann::json(nullptr)},
          {"splits", splits_json},
          {"reference_frame", reference_frame},
          {"tensors",
           {{"voltages", {{"dtype", "float32"}, {"shape", {"count", 104}}}},
            {"maps", {{"dtype", "float32"}, {"shape", {"count", 48, 48}}}},
            {"ids", {{"dtype", "int32"}, {"shape", {"count", 2}}}}}}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.generator_version = j.at("generator_version").get<std::string>();
  m.config = j.at("config");
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.sample_count = j.at("sample_count").get<int>();
  m.split_ratio = j.at("split_ratio").get<std::array<int, 3>>();
  if (!j.at("noise").is_null()) m.snr_db = j.at("noise").at("snr_db").get<double>();
  for (int s = 0; s < 3; ++s) {
    const auto& sj = j.at("splits").at(kSplitNames[s]);
    m.splits[s].count = sj.at("count").get<int>();
    m.splits[s].files = sj.at("files").get<std::vector<std::string>>();
  }
  m.reference_frame = j.at("reference_frame").get<std::vector<double>>();
  return m;
}

DatasetManifest build_dataset(const DatasetConfig& config) {
  validate(config);
  if (fs::exists(config.output))
    throw DatasetIoError("refusing to overwrite existing dataset at " + config.output.string());

  const auto ctx = SimulationContext::create(config.refinement_level, {config.current},
                                             {config.contact_impedance});

  struct Slot {
    int subset, index, split;
  };
  std::vector<Slot> slots;
  std::array<std::vector<int>, 3> split_members;
  for (int s = 0; s < static_cast<int>(config.subsets.size()); ++s) {
    const auto counts = split_counts(config.subsets[s].count, config.split_ratio);
    int i = 0;
    for (int split = 0; split < 3; ++split)
      for (int k = 0; k < counts[split]; ++k, ++i) {
        split_members[split].push_back(static_cast<int>(slots.size()));
        slots.push_back({s, i, split});
      }
  }

  const int n = static_cast<int>(slots.size());
  constexpr int M = forward::kMeasurements;
  constexpr int P = kMapSize * kMapSize;
  const bool noisy = config.noise.snr_db.has_value();
  std::vector<float> volts(static_cast<std::size_t>(n) * M), volts_noisy(noisy ? volts.size() : 0),
      maps(static_cast<std::size_t>(n) * P);

  auto work = [&](int begin, int end) {
    for (int k = begin; k < end; ++k) {
      const auto& slot = slots[k];
      const auto& sub = config.subsets[slot.subset];
      const auto phantom = sample_phantom(derive_seed(config.seed, slot.subset, slot.index, 0), sub.touches, sub.shape);
      const auto noise_seed = derive_seed(config.seed, slot.subset, slot.index, 1);
      forward::VoltageFrame clean, dirty;
      Grid2D<float> map;
      if (noisy) {
        auto pair = simulate_sample_pair(phantom, ctx, *config.noise.snr_db, noise_seed);
        clean = std::move(pair.clean);
        dirty = std::move(pair.noisy);
        map = std::move(pair.map);
      } else {
        auto s = simulate_sample(phantom, ctx);
        clean = std::move(s.difference);
        map = std::move(s.map);
      }
      for (int m = 0; m < M; ++m) {
        volts[static_cast<std::size_t>(k) * M + m] = static_cast<float>(clean.values[m]);
        if (noisy) volts_noisy[static_cast<std::size_t>(k) * M + m] = static_cast<float>(dirty.values[m]);
      }
      std::copy(map.storage().begin(), map.storage().end(), maps.begin() + static_cast<std::ptrdiff_t>(k) * P);
    }
  };
  const int threads = std::max(1, std::min(config.threads, n));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, n * t / threads, n * (t + 1) / threads);
  }

  DatasetManifest manifest;
  manifest.config = config.to_json();
  manifest.config_hash = hex64(fnv1a64(manifest.config.dump()));
  manifest.generator_version = kGeneratorVersion;
  manifest.seed = config.seed;
  manifest.sample_count = n;
  manifest.split_ratio = config.split_ratio;
  manifest.snr_db = config.noise.snr_db;
  manifest.reference_frame = ctx.reference.values;

  const fs::path staging =
      config.output.parent_path() / (config.output.filename().string() + ".staging");
  try {
    fs::remove_all(staging);
    for (int split = 0; split < 3; ++split) {
      const auto& members = split_members[split];
      const auto dir = staging / kSplitNames[split];
      fs::create_directories(dir);
      const auto count = static_cast<std::int64_t>(members.size());
      std::vector<float> v, vn, mp;
      std::vector<std::int32_t> ids;
      v.reserve(members.size() * M);
      mp.reserve(members.size() * P);
      for (int k : members) {
        v.insert(v.end(), volts.begin() + static_cast<std::ptrdiff_t>(k) * M,
                 volts.begin() + static_cast<std::ptrdiff_t>(k + 1) * M);
        if (noisy)
          vn.insert(vn.end(), volts_noisy.begin() + static_cast<std::ptrdiff_t>(k) * M,
                    volts_noisy.begin() + static_cast<std::ptrdiff_t>(k + 1) * M);
        mp.insert(mp.end(), maps.begin() + static_cast<std::ptrdiff_t>(k) * P,
                  maps.begin() + static_cast<std::ptrdiff_t>(k + 1) * P);
        ids.push_back(slots[k].subset);
        ids.push_back(slots[k].index);
      }
      auto& info = manifest.splits[split];
      info.count = static_cast<int>(count);
      const std::string prefix = kSplitNames[split] + "/";
      write_array(dir / "voltages.bin", ArrayHeader{{count, M}, "", "sample,measurement(drive-major,reduced)"}, v);
      write_array(dir / "maps.bin", ArrayHeader{{count, kMapSize, kMapSize}, "", "sample,row(+y),col(+x)"}, mp);
      write_array(dir / "ids.bin", ArrayHeader{{count, 2}, "", "sample,(subset,index)"}, ids);
      info.files = {prefix + "voltages.bin", prefix + "maps.bin", prefix + "ids.bin"};
      if (noisy) {
        write_array(dir / "voltages_noisy.bin",
                    ArrayHeader{{count, M}, "", "sample,measurement(drive-major,reduced)"}, vn);
        info.files.push_back(prefix + "voltages_noisy.bin");
      }
    }
    std::ofstream out(staging / "manifest.json", std::ios::trunc);
    out << manifest.to_json().dump(2) << '\n';
    out.close();
    if (!out) throw DatasetIoError("failed writing manifest.json");
    if (!config.output.parent_path().empty()) fs::create_directories(config.output.parent_path());
    fs::rename(staging, config.output);
  } catch (const std::exception& e) {
    std::error_code ec;
    fs::remove_all(staging, ec);
    throw DatasetIoError(std::string("dataset write failed: ") + e.what());
  }
  return manifest;
}

DatasetManifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DatasetIoError("no manifest.json in " + dir.string());
  return DatasetManifest::from_json(nlohmann::json::parse(in));
}

std::span<const float> SplitData::voltage(int i, bool noisy) const {
  const auto& src = noisy ? voltages_noisy : voltages;
  if (noisy && src.empty()) throw std::logic_error("split has no noisy voltages");
  return std::span<const float>(src).subspan(static_cast<std::size_t>(i) * forward::kMeasurements,
                                             forward::kMeasurements);
}

std::span<const float> SplitData::map(int i) const {
  return std::span<const float>(maps).subspan(static_cast<std::size_t>(i) * kMapSize * kMapSize,
                                              kMapSize * kMapSize);
}

SplitData load_split(const fs::path& dir, const std::string& split) {
  const auto manifest = read_manifest(dir);
  SplitData d;
  const auto base = dir / split;
  try {
    ArrayHeader h;
    d.voltages = read_array_as<float>(base / "voltages.bin", &h);
    d.count = static_cast<int>(h.shape.at(0));
    d.maps = read_array_as<float>(base / "maps.bin");
    d.ids = read_array_as<std::int32_t>(base / "ids.bin");
    if (fs::exists(base / "voltages_noisy.bin")) d.voltages_noisy = read_array_as<float>(base / "voltages_noisy.bin");
  } catch (const std::exception& e) {
    throw DatasetIoError(e.what());
  }
  int expected = -1;
  for (int s = 0; s < 3; ++s)
    if (kSplitNames[s] == split) expected = manifest.splits[s].count;
  if (expected != d.count) throw DatasetIoError("split '" + split + "' does not match its manifest");
  return d;
}

}  // namespace ptet::data

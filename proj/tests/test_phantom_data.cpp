#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ptet/core/array_io.hpp"
#include "ptet/data/dataset.hpp"

using namespace ptet;
using namespace ptet::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ptet_test_" + name);
  fs::remove_all(p);
  fs::remove_all(p.string() + ".staging");
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double energy(const forward::VoltageFrame& f) {
  double e = 0;
  for (double v : f.values) e += v * v;
  return e;
}

}  // namespace

TEST_CASE("sample_phantom") {
  const auto p = sample_phantom(42, 1);
  REQUIRE(p.touches.size() == 1);
  const auto& t = std::get<TouchRegion>(p.touches[0]);
  CHECK(t.diameter() >= 7.5);
  CHECK(t.diameter() <= 27.5);
  CHECK(t.conductivity_ratio() >= 0.05);
  CHECK(t.conductivity_ratio() <= 2.0);
  CHECK(t.inside_domain());

  CHECK_THROWS_AS(sample_phantom(42, 0), std::invalid_argument);
  CHECK_THROWS_AS(sample_phantom(42, 6), std::invalid_argument);
  CHECK_THROWS_AS(parse_shape_class("hexagonal"), std::invalid_argument);

  for (int n = 1; n <= 5; ++n) {
    const auto a = sample_phantom(7, n), b = sample_phantom(7, n);
    REQUIRE(a.touches.size() == static_cast<std::size_t>(n));
    CHECK(rasterize(a) == rasterize(b));
    CHECK_NOTHROW(a.validate());
  }
  CHECK_FALSE(rasterize(sample_phantom(7, 3)) == rasterize(sample_phantom(8, 3)));
}

TEST_CASE("sampled touch parameters cover their ranges") {
  double dmin = 1e9, dmax = 0, rmin = 1e9, rmax = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto& t = std::get<TouchRegion>(sample_phantom(s, 1).touches[0]);
    dmin = std::min(dmin, t.diameter());
    dmax = std::max(dmax, t.diameter());
    rmin = std::min(rmin, t.conductivity_ratio());
    rmax = std::max(rmax, t.conductivity_ratio());
  }
  CHECK(dmin < 8.0);
  CHECK(dmax > 27.0);
  CHECK(rmin < 0.1);
  CHECK(rmax > 1.95);
}

TEST_CASE("touch region invariants") {
  CHECK_THROWS_AS(TouchRegion({50, 50}, 10.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(TouchRegion({50, 50}, 5.0, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(TouchRegion({50, 50}, 10.0, 2.5), std::invalid_argument);
  Phantom p;
  p.touches.emplace_back(TouchRegion({3, 50}, 10.0, 1.5));
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("annular and L-shaped templates") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    for (auto shape : {ShapeClass::annular, ShapeClass::l_shape}) {
      const auto p = sample_phantom(s, 1, shape);
      CHECK_NOTHROW(p.validate());
      const auto map = rasterize(p);
      double sum = 0;
      for (double v : map.values()) sum += v;
      CHECK(sum > 0);
    }
  }
  const auto& a = std::get<Annulus>(sample_phantom(3, 1, ShapeClass::annular).touches[0]);
  CHECK(a.outer_diameter >= 20.0);
  CHECK(a.outer_diameter <= 35.0);
  CHECK(a.width >= 4.0);
  CHECK(a.width <= 8.0);
  CHECK_FALSE(a.contains(a.center));  // hole in the middle
  const auto& l = std::get<LShape>(sample_phantom(3, 1, ShapeClass::l_shape).touches[0]);
  CHECK(l.length_a >= 10.0);
  CHECK(l.length_a <= 40.0);
  CHECK(l.width_b >= 8.0);
  CHECK(l.width_b <= 12.0);
  CHECK_THROWS_AS(sample_phantom(3, 2, ShapeClass::annular), std::invalid_argument);
}

TEST_CASE("rasterize") {
  SUBCASE("empty phantom") {
    const auto m = rasterize(Phantom{});
    for (double v : m.values()) CHECK(v == 0.0);
  }
  SUBCASE("centred 27.5 mm disk") {
    Phantom p;
    p.touches.emplace_back(TouchRegion({50, 50}, 27.5, 2.0));
    const auto m = rasterize(p);
    int count = 0;
    for (double v : m.values()) {
      if (v != 0.0) {
        CHECK(v == doctest::Approx(1.0));
        ++count;
      }
    }
    const double r = 13.75 / 100.0 * 48.0;
    CHECK(std::abs(count - std::numbers::pi * r * r) <= 0.1 * std::numbers::pi * r * r);
  }
  SUBCASE("later touch wins on overlap, contrast is unsigned") {
    Phantom p;
    p.touches.emplace_back(TouchRegion({50, 50}, 20.0, 1.5));
    p.touches.emplace_back(TouchRegion({50, 50}, 10.0, 0.2));
    const auto m = rasterize(p);
    CHECK(m(24, 24) == doctest::Approx(0.8));
    CHECK(m(24, 27) == doctest::Approx(0.5));
    CHECK(m(0, 0) == 0.0);
  }
}

TEST_CASE("simulate_sample") {
  const auto ctx = SimulationContext::create(4);
  SUBCASE("no touches, no noise: exactly zero") {
    const auto s = simulate_sample(Phantom{}, ctx);
    for (double v : s.difference.values) CHECK(v == 0.0);
    CHECK(s.difference.is_difference);
  }
  SUBCASE("determinism") {
    const auto p = sample_phantom(5, 3);
    const auto a = simulate_sample(p, ctx, {50.0}, 99);
    const auto b = simulate_sample(p, ctx, {50.0}, 99);
    CHECK(a.difference.values == b.difference.values);
    CHECK(a.map == b.map);
  }
  SUBCASE("noise leaves the label untouched") {
    const auto p = sample_phantom(5, 2);
    CHECK(simulate_sample(p, ctx).map == simulate_sample(p, ctx, {50.0}, 1).map);
  }
  SUBCASE("map is nonzero iff the phantom has a touch") {
    for (int n = 1; n <= 5; ++n) {
      const auto s = simulate_sample(sample_phantom(n, n), ctx);
      double sum = 0;
      for (float v : s.map.values()) sum += v;
      CHECK(sum > 0);
    }
  }
  SUBCASE("difference energy grows with contrast") {
    for (auto ratios : {std::vector<double>{1.1, 1.4, 1.7, 2.0}, std::vector<double>{0.9, 0.6, 0.3, 0.05}}) {
      double last = 0;
      for (double r : ratios) {
        Phantom p;
        p.touches.emplace_back(TouchRegion({35, 60}, 20.0, r));
        const double e = energy(simulate_sample(p, ctx).difference);
        CHECK(e > last);
        last = e;
      }
    }
  }
}

TEST_CASE("50 dB noise has the declared SNR") {
  const auto ctx = SimulationContext::create(2);
  std::mt19937_64 rng(2024);
  double signal = 0, noise = 0;
  for (int i = 0; i < 1000; ++i) {
    auto v = ctx.reference.values;
    add_noise(v, 50.0, rng);
    for (int k = 0; k < forward::kMeasurements; ++k) {
      signal += ctx.reference.values[k] * ctx.reference.values[k];
      noise += (v[k] - ctx.reference.values[k]) * (v[k] - ctx.reference.values[k]);
    }
  }
  const double snr = 10 * std::log10(signal / noise);
  CHECK(std::abs(snr - 50.0) <= 1.0);
}

TEST_CASE("split counts") {
  CHECK(split_counts(1000, {18, 1, 1}) == std::array<int, 3>{900, 50, 50});
  CHECK(split_counts(20, {18, 1, 1}) == std::array<int, 3>{18, 1, 1});
  CHECK(split_counts(5000, {18, 1, 1}) == std::array<int, 3>{4500, 250, 250});
  CHECK(split_counts(0, {18, 1, 1}) == std::array<int, 3>{0, 0, 0});
}

TEST_CASE("build_dataset") {
  auto cfg = DatasetConfig::standard(20, 11);
  cfg.refinement_level = 2;
  cfg.noise.snr_db = 50.0;

  cfg.output = scratch("ds_a");
  const auto ma = build_dataset(cfg);
  CHECK(ma.sample_count == 100);
  CHECK(ma.splits[0].count == 90);
  CHECK(ma.splits[1].count == 5);
  CHECK(ma.splits[2].count == 5);

  SUBCASE("rerun is byte-identical") {
    auto cfg_b = cfg;
    cfg_b.output = scratch("ds_b");
    cfg_b.threads = 3;
    build_dataset(cfg_b);
    CHECK(slurp(cfg.output / "manifest.json") == slurp(cfg_b.output / "manifest.json"));
    for (const auto& split : kSplitNames)
      for (const char* f : {"voltages.bin", "maps.bin", "ids.bin", "voltages_noisy.bin"})
        CHECK(slurp(cfg.output / split / f) == slurp(cfg_b.output / split / f));
    fs::remove_all(cfg_b.output);
  }
  SUBCASE("splits partition the sample ids") {
    std::set<std::pair<int, int>> seen;
    int total = 0;
    for (const auto& split : kSplitNames) {
      const auto d = load_split(cfg.output, split);
      for (int i = 0; i < d.count; ++i) {
        CHECK(seen.insert({d.ids[2 * i], d.ids[2 * i + 1]}).second);
        ++total;
      }
    }
    CHECK(total == 100);
  }
  SUBCASE("noisy variant shares the clean labels") {
    auto clean_cfg = cfg;
    clean_cfg.noise = {};
    clean_cfg.output = scratch("ds_clean");
    build_dataset(clean_cfg);
    const auto noisy = load_split(cfg.output, "train");
    const auto clean = load_split(clean_cfg.output, "train");
    CHECK(noisy.maps == clean.maps);
    CHECK(noisy.voltages == clean.voltages);
    CHECK(noisy.voltages_noisy != noisy.voltages);
    CHECK(clean.voltages_noisy.empty());
    fs::remove_all(clean_cfg.output);
  }
  SUBCASE("manifest round-trips and the dataset is never overwritten") {
    const auto m = read_manifest(cfg.output);
    CHECK(m.to_json() == ma.to_json());
    CHECK(m.snr_db == 50.0);
    CHECK(m.reference_frame.size() == 104u);
    CHECK_THROWS_AS(build_dataset(cfg), DatasetIoError);
  }
  fs::remove_all(cfg.output);
}

TEST_CASE("failed writes leave nothing behind") {
  auto cfg = DatasetConfig::standard(2, 1);
  cfg.refinement_level = 1;
  const auto blocker = scratch("blocker");
  { std::ofstream(blocker) << "x"; }
  cfg.output = blocker / "ds";  // parent is a regular file
  CHECK_THROWS_AS(build_dataset(cfg), DatasetIoError);
  CHECK_FALSE(fs::exists(blocker.string() + "/ds.staging"));
  fs::remove(blocker);
}

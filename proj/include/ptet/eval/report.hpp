#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ptet/core/grid.hpp"
#include "ptet/eval/metrics.hpp"

namespace ptet::eval {

struct SampleMetrics {
  int subset = 0;
  int index = 0;
  MetricValues values;
};

struct MetricReport {
  std::string label;
  nlohmann::json provenance;
  std::vector<SampleMetrics> samples;
  Aggregate summary;
  // Samples whose ground truth is all zero; left out of samples and summary.
  int excluded_zero_gt = 0;

  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

// maps: n x (size*size) row-major; ids: n x 2 (subset, index) or empty.
MetricReport evaluate_maps(std::string label, std::span<const float> predictions, std::span<const float> truth,
                           std::span<const int> ids, int size = 48, nlohmann::json provenance = {});

// Per-metric differences b - a of the summaries.
nlohmann::json compare_reports(const MetricReport& a, const MetricReport& b);

// Writes report.json, metrics.csv and up to `panels` GT | prediction PNGs
// (display-smoothed) under dir.
void write_report(const MetricReport& report, const std::filesystem::path& dir, std::span<const float> predictions,
                  std::span<const float> truth, int size = 48, int panels = 8, double display_sigma = 1.0);

// 8-bit grayscale PNG, values clamped to [0, 1]; scale enlarges each pixel.
void write_png(const std::filesystem::path& path, const Grid2D<double>& img, int scale = 1);

}  // namespace ptet::eval

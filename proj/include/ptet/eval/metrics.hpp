#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptet/core/grid.hpp"

namespace ptet::eval {

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

// Mean SSIM over the valid region (no padding) of a Gaussian-weighted window.
// Throws std::invalid_argument when the images differ in shape or are
// smaller than the window.
double ssim(const Grid2D<double>& a, const Grid2D<double>& b, const SsimOptions& opt = {});

double mse(std::span<const double> pred, std::span<const double> gt);
// ||pred - gt|| / ||gt||; empty when gt is all zero.
std::optional<double> relative_error(std::span<const double> pred, std::span<const double> gt);
// 10 log10(max^2 / mse); +inf when mse == 0.
double psnr(std::span<const double> pred, std::span<const double> gt, double max_value = 1.0);
// Pearson correlation; empty when either input is constant.
std::optional<double> correlation(std::span<const double> pred, std::span<const double> gt);

struct MetricValues {
  std::optional<double> re;
  double psnr = std::numeric_limits<double>::infinity();
  std::optional<double> cc;
  double mse = 0;
  double ssim = 1;
};

MetricValues metric_suite(const Grid2D<double>& pred, const Grid2D<double>& gt);

struct Aggregate {
  double re = 0, psnr = 0, cc = 0, mse = 0, ssim = 0;
  int count = 0;
  // Samples left out of the corresponding mean.
  int re_missing = 0;
  int psnr_infinite = 0;
  int cc_missing = 0;
};

Aggregate aggregate(std::span<const MetricValues> values);

// Separable Gaussian blur with edge replication, radius ceil(3 sigma). Used
// for display only.
Grid2D<double> gaussian_blur(const Grid2D<double>& img, double sigma);

}  // namespace ptet::eval

#include "ptet/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ptet::eval {

namespace {

void require_same(std::size_t a, std::size_t b) {
  if (a != b || a == 0) throw std::invalid_argument("metric inputs must be non-empty and equal length");
}

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Valid-mode separable correlation.
Grid2D<double> filter_valid(const Grid2D<double>& img, const std::vector<double>& w) {
  const int k = static_cast<int>(w.size());
  const int rows = img.rows() - k + 1, cols = img.cols() - k + 1;
  Grid2D<double> tmp(img.rows(), cols, 0.0), out(rows, cols, 0.0);
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = 0; i < k; ++i) acc += w[i] * img(r, c + i);
      tmp(r, c) = acc;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = 0; i < k; ++i) acc += w[i] * tmp(r + i, c);
      out(r, c) = acc;
    }
  return out;
}

Grid2D<double> product(const Grid2D<double>& a, const Grid2D<double>& b) {
  Grid2D<double> p(a.rows(), a.cols(), 0.0);
  for (std::size_t i = 0; i < a.values().size(); ++i) p.values()[i] = a.values()[i] * b.values()[i];
  return p;
}

}  // namespace

double ssim(const Grid2D<double>& a, const Grid2D<double>& b, const SsimOptions& opt) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("ssim: shape mismatch");
  if (a.rows() < opt.window || a.cols() < opt.window)
    throw std::invalid_argument("ssim: image smaller than window");
  if (!(opt.data_range > 0)) throw std::invalid_argument("ssim: data_range must be positive");
  const auto w = gaussian_taps(opt.window, opt.sigma);
  const auto mu_a = filter_valid(a, w), mu_b = filter_valid(b, w);
  const auto aa = filter_valid(product(a, a), w);
  const auto bb = filter_valid(product(b, b), w);
  const auto ab = filter_valid(product(a, b), w);
  const double c1 = std::pow(opt.k1 * opt.data_range, 2), c2 = std::pow(opt.k2 * opt.data_range, 2);
  double sum = 0;
  const auto n = mu_a.values().size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a.values()[i], mb = mu_b.values()[i];
    const double va = aa.values()[i] - ma * ma;
    const double vb = bb.values()[i] - mb * mb;
    const double cov = ab.values()[i] - ma * mb;
    sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return sum / static_cast<double>(n);
}

double mse(std::span<const double> pred, std::span<const double> gt) {
  require_same(pred.size(), gt.size());
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - gt[i]) * (pred[i] - gt[i]);
  return s / static_cast<double>(pred.size());
}

std::optional<double> relative_error(std::span<const double> pred, std::span<const double> gt) {
  require_same(pred.size(), gt.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    num += (pred[i] - gt[i]) * (pred[i] - gt[i]);
    den += gt[i] * gt[i];
  }
  if (den == 0) return std::nullopt;
  return std::sqrt(num / den);
}

double psnr(std::span<const double> pred, std::span<const double> gt, double max_value) {
  const double m = mse(pred, gt);
  if (m == 0) return std::numeric_limits<double>::infinity();
  return 10 * std::log10(max_value * max_value / m);
}

std::optional<double> correlation(std::span<const double> pred, std::span<const double> gt) {
  require_same(pred.size(), gt.size());
  const double n = static_cast<double>(pred.size());
  double mp = 0, mg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mp += pred[i];
    mg += gt[i];
  }
  mp /= n;
  mg /= n;
  double spg = 0, spp = 0, sgg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dp = pred[i] - mp, dg = gt[i] - mg;
    spg += dp * dg;
    spp += dp * dp;
    sgg += dg * dg;
  }
  if (spp == 0 || sgg == 0) return std::nullopt;
  return std::clamp(spg / std::sqrt(spp * sgg), -1.0, 1.0);
}

MetricValues metric_suite(const Grid2D<double>& pred, const Grid2D<double>& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw std::invalid_argument("metric_suite: shape mismatch");
  MetricValues m;
  m.mse = mse(pred.values(), gt.values());
  m.re = relative_error(pred.values(), gt.values());
  m.psnr = psnr(pred.values(), gt.values());
  m.cc = correlation(pred.values(), gt.values());
  if (!m.cc && pred == gt) m.cc = 1.0;  // identical constant maps
  m.ssim = ssim(pred, gt);
  return m;
}

Aggregate aggregate(std::span<const MetricValues> values) {
  Aggregate a;
  a.count = static_cast<int>(values.size());
  int re_n = 0, psnr_n = 0, cc_n = 0;
  for (const auto& v : values) {
    a.mse += v.mse;
    a.ssim += v.ssim;
    if (v.re) {
      a.re += *v.re;
      ++re_n;
    } else {
      ++a.re_missing;
    }
    if (std::isfinite(v.psnr)) {
      a.psnr += v.psnr;
      ++psnr_n;
    } else {
      ++a.psnr_infinite;
    }
    if (v.cc) {
      a.cc += *v.cc;
      ++cc_n;
    } else {
      ++a.cc_missing;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  a.mse = a.count ? a.mse / a.count : nan;
  a.ssim = a.count ? a.ssim / a.count : nan;
  a.re = re_n ? a.re / re_n : nan;
  a.psnr = psnr_n ? a.psnr / psnr_n : std::numeric_limits<double>::infinity();
  a.cc = cc_n ? a.cc / cc_n : nan;
  return a;
}

Grid2D<double> gaussian_blur(const Grid2D<double>& img, double sigma) {
  if (!(sigma > 0)) return img;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  const auto w = gaussian_taps(2 * radius + 1, sigma);
  const int rows = img.rows(), cols = img.cols();
  Grid2D<double> tmp(rows, cols, 0.0), out(rows, cols, 0.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += w[i + radius] * img(r, std::clamp(c + i, 0, cols - 1));
      tmp(r, c) = acc;
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += w[i + radius] * tmp(std::clamp(r + i, 0, rows - 1), c);
      out(r, c) = acc;
    }
  return out;
}

}  // namespace ptet::eval

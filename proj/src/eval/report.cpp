#include "ptet/eval/report.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>
#include <algorithm>
#include <stdexcept>

namespace ptet::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json number_or_null(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

Grid2D<double> to_grid(std::span<const float> flat, int size) {
  Grid2D<double> g(size, size, 0.0);
  for (int i = 0; i < size * size; ++i) g.values()[i] = flat[i];
  return g;
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

}  // namespace

json MetricReport::to_json() const {
  json j;
  j["label"] = label;
  j["provenance"] = provenance;
  j["definitions"] = {
      {"RE", "||pred - gt||_2 / ||gt||_2"},
      {"PSNR", "10 log10(1 / MSE), peak 1"},
      {"CC", "Pearson correlation over pixels"},
      {"MSE", "mean squared error over pixels"},
      {"SSIM", "mean SSIM, 11x11 Gaussian window sigma 1.5, K1 0.01, K2 0.03, data range 1, valid region"},
  };
  j["count"] = summary.count;
  j["excluded_zero_gt"] = excluded_zero_gt;
  j["summary"] = {{"RE", number_or_null(summary.re)},     {"PSNR", number_or_null(summary.psnr)},
                  {"CC", number_or_null(summary.cc)},     {"MSE", number_or_null(summary.mse)},
                  {"SSIM", number_or_null(summary.ssim)}, {"re_missing", summary.re_missing},
                  {"psnr_infinite", summary.psnr_infinite}, {"cc_missing", summary.cc_missing}};
  return j;
}

void MetricReport::write_csv(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "subset,index,RE,PSNR,CC,MSE,SSIM\n";
  for (const auto& s : samples) {
    out << s.subset << ',' << s.index << ',' << csv_number(s.values.re) << ',' << csv_number(s.values.psnr) << ','
        << csv_number(s.values.cc) << ',' << csv_number(s.values.mse) << ',' << csv_number(s.values.ssim) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MetricReport evaluate_maps(std::string label, std::span<const float> predictions, std::span<const float> truth,
                           std::span<const int> ids, int size, json provenance) {
  const std::size_t pixels = static_cast<std::size_t>(size) * size;
  if (predictions.size() != truth.size() || truth.size() % pixels != 0)
    throw std::invalid_argument("evaluate: prediction and truth sizes differ");
  const std::size_t n = truth.size() / pixels;
  if (!ids.empty() && ids.size() != 2 * n) throw std::invalid_argument("evaluate: id count mismatch");

  MetricReport report;
  report.label = std::move(label);
  report.provenance = std::move(provenance);
  for (std::size_t i = 0; i < n; ++i) {
    const auto gt = to_grid(truth.subspan(i * pixels, pixels), size);
    bool empty = true;
    for (double v : gt.values()) empty = empty && v == 0.0;
    if (empty) {
      ++report.excluded_zero_gt;
      continue;
    }
    SampleMetrics s;
    s.subset = ids.empty() ? 0 : ids[2 * i];
    s.index = ids.empty() ? static_cast<int>(i) : ids[2 * i + 1];
    s.values = metric_suite(to_grid(predictions.subspan(i * pixels, pixels), size), gt);
    report.samples.push_back(s);
  }
  std::vector<MetricValues> values;
  values.reserve(report.samples.size());
  for (const auto& s : report.samples) values.push_back(s.values);
  report.summary = aggregate(values);
  return report;
}

json compare_reports(const MetricReport& a, const MetricReport& b) {
  auto delta = [](double x, double y) { return number_or_null(y - x); };
  json j;
  j["a"] = a.to_json();
  j["b"] = b.to_json();
  j["delta"] = {{"RE", delta(a.summary.re, b.summary.re)},       {"PSNR", delta(a.summary.psnr, b.summary.psnr)},
                {"CC", delta(a.summary.cc, b.summary.cc)},       {"MSE", delta(a.summary.mse, b.summary.mse)},
                {"SSIM", delta(a.summary.ssim, b.summary.ssim)}};
  return j;
}

void write_png(const fs::path& path, const Grid2D<double>& img, int scale) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  const int w = img.cols() * scale, h = img.rows() * scale;
  std::vector<png_byte> row(w);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = std::clamp(img(y / scale, x / scale), 0.0, 1.0);
      row[x] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_report(const MetricReport& report, const fs::path& dir, std::span<const float> predictions,
                  std::span<const float> truth, int size, int panels, double display_sigma) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    out << report.to_json().dump(2) << '\n';
    if (!out) throw std::runtime_error("write failed: " + (dir / "report.json").string());
  }
  report.write_csv(dir / "metrics.csv");
  const std::size_t pixels = static_cast<std::size_t>(size) * size;
  const int n = static_cast<int>(std::min(predictions.size(), truth.size()) / pixels);
  if (panels <= 0 || n == 0) return;
  fs::create_directories(dir / "panels");
  const int gap = 2;
  for (int i = 0; i < std::min(panels, n); ++i) {
    const auto gt = gaussian_blur(to_grid(truth.subspan(i * pixels, pixels), size), display_sigma);
    const auto pr = gaussian_blur(to_grid(predictions.subspan(i * pixels, pixels), size), display_sigma);
    Grid2D<double> panel(size, 2 * size + gap, 1.0);
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        panel(r, c) = gt(r, c);
        panel(r, c + size + gap) = pr(r, c);
      }
    char name[32];
    std::snprintf(name, sizeof name, "panel_%03d.png", i);
    write_png(dir / "panels" / name, panel, 4);
  }
}

}  // namespace ptet::eval

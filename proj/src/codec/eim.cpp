#include "ptet/codec/eim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace ptet::codec {

namespace {

template <class T>
Eim build_eim_impl(std::span<const T> frame) {
  if (frame.size() != static_cast<std::size_t>(kFrameLength))
    throw std::invalid_argument("EIM construction needs exactly 104 measurements");
  Eim eim(kEimSize, kEimSize, 0.0);
  std::size_t index = 0;
  for (int i = 0; i < kEimSize; ++i) {
    for (int j = 0; j < kEimSize; ++j) {
      if (j > i + 1 && index < frame.size()) {
        eim(i, j) = frame[index];
        eim(j, i) = frame[index];
        ++index;
      }
    }
  }
  return eim;
}

}  // namespace

Eim build_eim(std::span<const double> frame) { return build_eim_impl(frame); }
Eim build_eim(std::span<const float> frame) { return build_eim_impl(frame); }

std::vector<double> read_eim(const Eim& eim) {
  if (eim.rows() != kEimSize || eim.cols() != kEimSize) throw std::invalid_argument("EIM must be 16x16");
  std::vector<double> out;
  out.reserve(kFrameLength);
  for (int i = 0; i < kEimSize; ++i)
    for (int j = 0; j < kEimSize; ++j)
      if (j > i + 1 && out.size() < static_cast<std::size_t>(kFrameLength)) out.push_back(eim(i, j));
  return out;
}

double keys_kernel(double x, double a) {
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

std::vector<Taps> taps_for(int in, int out) {
  std::vector<Taps> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double t = src - base;
    for (int k = 0; k < 4; ++k) {
      taps[o].index[k] = std::clamp(base - 1 + k, 0, in - 1);
      taps[o].weight[k] = keys_kernel(t - (k - 1));
    }
  }
  return taps;
}

}  // namespace

Grid2D<double> resize_bicubic(const Grid2D<double>& src, int out_rows, int out_cols) {
  const auto row_taps = taps_for(src.rows(), out_rows);
  const auto col_taps = taps_for(src.cols(), out_cols);
  Grid2D<double> tmp(src.rows(), out_cols, 0.0);
  for (int r = 0; r < src.rows(); ++r)
    for (int c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += col_taps[c].weight[k] * src(r, col_taps[c].index[k]);
      tmp(r, c) = acc;
    }
  Grid2D<double> out(out_rows, out_cols, 0.0);
  for (int r = 0; r < out_rows; ++r)
    for (int c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += row_taps[r].weight[k] * tmp(row_taps[r].index[k], c);
      out(r, c) = acc;
    }
  return out;
}

E2im build_e2im(const Eim& eim, UpsampleMode mode) {
  if (eim.rows() != kEimSize || eim.cols() != kEimSize) throw std::invalid_argument("EIM must be 16x16");
  if (mode == UpsampleMode::bicubic) return resize_bicubic(eim, kE2imSize, kE2imSize);
  constexpr int f = kE2imSize / kEimSize;
  E2im out(kE2imSize, kE2imSize, 0.0);
  for (int r = 0; r < kE2imSize; ++r)
    for (int c = 0; c < kE2imSize; ++c) out(r, c) = eim(r / f, c / f);
  return out;
}

FrameStats FrameStats::compute(std::span<const float> frames, int length) {
  if (length <= 0 || frames.size() % static_cast<std::size_t>(length) != 0)
    throw std::invalid_argument("frame buffer is not a whole number of frames");
  const std::size_t n = frames.size() / length;
  if (n == 0) throw std::invalid_argument("cannot compute statistics of zero frames");
  FrameStats s;
  s.mean.assign(length, 0.0);
  s.std.assign(length, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < length; ++k) s.mean[k] += frames[i * length + k];
  for (auto& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < length; ++k) {
      const double d = frames[i * length + k] - s.mean[k];
      s.std[k] += d * d;
    }
  for (auto& v : s.std) v = std::sqrt(v / static_cast<double>(n));
  return s;
}

namespace {

template <class T>
std::vector<double> normalize_impl(std::span<const T> frame, const FrameStats& stats) {
  if (frame.size() != stats.mean.size() || stats.mean.size() != stats.std.size())
    throw std::invalid_argument("frame length does not match normalisation statistics");
  std::vector<double> out(frame.size());
  for (std::size_t k = 0; k < frame.size(); ++k)
    out[k] = (frame[k] - stats.mean[k]) / std::max(stats.std[k], FrameStats::kStdFloor);
  return out;
}

}  // namespace

std::vector<double> normalize_frame(std::span<const double> frame, const FrameStats& stats) {
  return normalize_impl(frame, stats);
}
std::vector<double> normalize_frame(std::span<const float> frame, const FrameStats& stats) {
  return normalize_impl(frame, stats);
}

void frame_to_e2im(std::span<const float> frame, const FrameStats& stats, std::span<float> out,
                   UpsampleMode mode) {
  if (out.size() != static_cast<std::size_t>(kE2imSize * kE2imSize))
    throw std::invalid_argument("E2IM output buffer must hold 64x64 values");
  const auto z = normalize_frame(frame, stats);
  const auto img = build_e2im(build_eim(std::span<const double>(z)), mode);
  std::transform(img.storage().begin(), img.storage().end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
}

void frame_to_eim(std::span<const float> frame, const FrameStats& stats, std::span<float> out) {
  if (out.size() != static_cast<std::size_t>(kEimSize * kEimSize))
    throw std::invalid_argument("EIM output buffer must hold 16x16 values");
  const auto z = normalize_frame(frame, stats);
  const auto img = build_eim(std::span<const double>(z));
  std::transform(img.storage().begin(), img.storage().end(), out.begin(),
                 [](double v) { return static_cast<float>(v); });
}

}  // namespace ptet::codec

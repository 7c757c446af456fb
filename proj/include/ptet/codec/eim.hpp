#pragma once

#include <span>
#include <vector>

#include "ptet/core/grid.hpp"

namespace ptet::codec {

inline constexpr int kEimSize = 16;
inline constexpr int kE2imSize = 64;
inline constexpr int kFrameLength = 104;

using Eim = Grid2D<double>;
using E2im = Grid2D<double>;

// Fills cells (i, j), j > i + 1, row-major, mirroring each value to (j, i),
// until the 104 values are consumed. Cell (13, 15) (0-indexed) stays zero.
Eim build_eim(std::span<const double> frame);
Eim build_eim(std::span<const float> frame);

// Inverse of build_eim: reads the upper triangle in the same loop order.
std::vector<double> read_eim(const Eim& eim);

enum class UpsampleMode {
  bicubic,         // Keys kernel a = -0.5, half-pixel centres, edge replication
  patch_replicate  // each cell becomes a constant 4x4 patch
};

E2im build_e2im(const Eim& eim, UpsampleMode mode = UpsampleMode::bicubic);

// Separable bicubic resize of an arbitrary grid; exposed for reuse and tests.
Grid2D<double> resize_bicubic(const Grid2D<double>& src, int out_rows, int out_cols);

double keys_kernel(double x, double a = -0.5);

// Per-channel standardisation statistics, computed on the training split.
struct FrameStats {
  std::vector<double> mean;
  std::vector<double> std;

  static constexpr double kStdFloor = 1e-12;
  // frames: n x length, row-major.
  static FrameStats compute(std::span<const float> frames, int length = kFrameLength);
};

// (x - mean) / max(std, floor); throws std::invalid_argument on length
// mismatch.
std::vector<double> normalize_frame(std::span<const double> frame, const FrameStats& stats);
std::vector<double> normalize_frame(std::span<const float> frame, const FrameStats& stats);

// Model input from a raw difference frame: standardise, EIM, E2IM. Writes
// 64*64 row-major floats.
void frame_to_e2im(std::span<const float> frame, const FrameStats& stats, std::span<float> out,
                   UpsampleMode mode = UpsampleMode::bicubic);
// Same, stopping at the 16x16 EIM (the ablation input).
void frame_to_eim(std::span<const float> frame, const FrameStats& stats, std::span<float> out);

}  // namespace ptet::codec

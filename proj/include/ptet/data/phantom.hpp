#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ptet/core/grid.hpp"
#include "ptet/forward/fem.hpp"

namespace ptet::data {

using forward::Point;

inline constexpr int kMapSize = 48;
inline constexpr int kMaxTouches = 5;
inline constexpr double kMinDiameter = 7.5;   // mm
inline constexpr double kMaxDiameter = 27.5;  // mm
inline constexpr double kMinRatio = 0.05;
inline constexpr double kMaxRatio = 2.0;
// Largest |ratio - 1| a touch can produce; the normalisation constant.
inline constexpr double kMaxContrast = 1.0;

enum class ShapeClass { circular, annular, l_shape };

ShapeClass parse_shape_class(std::string_view name);
std::string_view to_string(ShapeClass s);

// Circular contact. Construction enforces the diameter and ratio ranges and
// rejects ratio == 1 (a touch that changes nothing).
class TouchRegion {
 public:
  TouchRegion(Point center, double diameter, double conductivity_ratio);

  Point center() const { return center_; }
  double diameter() const { return diameter_; }
  double conductivity_ratio() const { return ratio_; }
  bool contains(Point p) const;
  bool inside_domain() const;

 private:
  Point center_;
  double diameter_;
  double ratio_;
};

struct Annulus {
  Point center;
  double outer_diameter = 0;  // mm
  double width = 0;           // ring width, mm
  double conductivity_ratio = 1;
  bool contains(Point p) const;
  bool inside_domain() const;
};

// Two orthogonal bars sharing the corner `corner`, rotated by `angle`.
struct LShape {
  Point corner;
  double angle = 0;  // rad
  double length_a = 0, width_a = 0;
  double length_b = 0, width_b = 0;
  double conductivity_ratio = 1;
  bool contains(Point p) const;
  bool inside_domain() const;
};

using Touch = std::variant<TouchRegion, Annulus, LShape>;

double conductivity_ratio(const Touch& t);
bool contains(const Touch& t, Point p);

struct Phantom {
  ShapeClass shape_class = ShapeClass::circular;
  std::vector<Touch> touches;  // later entries win where touches overlap

  // Throws std::invalid_argument when touches leave the domain or the count
  // exceeds the class limit.
  void validate() const;
};

// Deterministic for a given seed. Circular phantoms take 1..5 touches;
// annular and L-shaped phantoms are single parametric templates
// (n_touches must be 1).
Phantom sample_phantom(std::uint64_t seed, int n_touches, ShapeClass shape_class = ShapeClass::circular);

// Raw ground truth: |ratio - 1| of the covering touch at each pixel centre,
// 0 elsewhere. Rows run along +y.
Grid2D<double> rasterize(const Phantom& phantom);

// Raw contrast divided by kMaxContrast and clamped to [0, 1].
Grid2D<float> normalize_map(const Grid2D<double>& raw);

// Background conductivity scaled by the covering touch's ratio.
Grid2D<double> conductivity_grid(const Phantom& phantom,
                                 double background = forward::kBackgroundConductivity);

struct NoiseSpec {
  std::optional<double> snr_db;  // none: noise-free
};

// Adds i.i.d. Gaussian noise with power mean(v^2) / 10^(snr/10).
void add_noise(std::vector<double>& values, double snr_db, std::mt19937_64& rng);

// Shared, immutable simulation state: mesh, drive pattern and the homogeneous
// reference frame.
struct SimulationContext {
  forward::Mesh mesh;
  forward::DrivePattern pattern;
  forward::SolverOptions options;
  forward::VoltageFrame reference;

  static SimulationContext create(int refinement_level, const forward::DrivePattern& pattern = {},
                                  const forward::SolverOptions& options = {});
};

struct Sample {
  forward::VoltageFrame difference;
  Grid2D<float> map;
};

// Difference frame (phantom minus homogeneous background) and normalised GT.
// With noise, independent draws are added to both absolute frames before
// differencing; the map is untouched.
Sample simulate_sample(const Phantom& phantom, const SimulationContext& ctx, const NoiseSpec& noise = {},
                       std::uint64_t noise_seed = 0);

// Noise-free and noisy difference frames from a single forward solve.
struct SamplePair {
  forward::VoltageFrame clean;
  forward::VoltageFrame noisy;
  Grid2D<float> map;
};
SamplePair simulate_sample_pair(const Phantom& phantom, const SimulationContext& ctx, double snr_db,
                                std::uint64_t noise_seed);

}  // namespace ptet::data

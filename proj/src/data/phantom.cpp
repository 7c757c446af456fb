#include "ptet/data/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ptet::data {

namespace {

constexpr double kSize = forward::kDomainSize;

bool in_domain(Point p) { return p.x >= 0.0 && p.x <= kSize && p.y >= 0.0 && p.y <= kSize; }

void check_ratio(double ratio) {
  if (!(ratio >= kMinRatio && ratio <= kMaxRatio))
    throw std::invalid_argument("conductivity ratio outside [0.05, 2]");
  if (ratio == 1.0) throw std::invalid_argument("conductivity ratio 1 describes no touch");
}

Point local_frame(Point p, Point origin, double angle) {
  const double dx = p.x - origin.x, dy = p.y - origin.y;
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * dx + s * dy, -s * dx + c * dy};
}

Point world_frame(Point q, Point origin, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {origin.x + c * q.x - s * q.y, origin.y + s * q.x + c * q.y};
}

std::mt19937_64 phantom_rng(std::uint64_t seed, int n_touches, ShapeClass shape) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(n_touches), static_cast<std::uint32_t>(shape)};
  return std::mt19937_64(seq);
}

double sample_ratio(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(kMinRatio, kMaxRatio);
  double r = u(rng);
  while (r == 1.0) r = u(rng);
  return r;
}

}  // namespace

ShapeClass parse_shape_class(std::string_view name) {
  if (name == "circular") return ShapeClass::circular;
  if (name == "annular") return ShapeClass::annular;
  if (name == "l_shape") return ShapeClass::l_shape;
  throw std::invalid_argument("unknown shape class '" + std::string(name) + "'");
}

std::string_view to_string(ShapeClass s) {
  switch (s) {
    case ShapeClass::circular: return "circular";
    case ShapeClass::annular: return "annular";
    case ShapeClass::l_shape: return "l_shape";
  }
  throw std::invalid_argument("invalid shape class");
}

TouchRegion::TouchRegion(Point center, double diameter, double conductivity_ratio)
    : center_(center), diameter_(diameter), ratio_(conductivity_ratio) {
  if (!(diameter >= kMinDiameter && diameter <= kMaxDiameter))
    throw std::invalid_argument("touch diameter outside [7.5, 27.5] mm");
  check_ratio(conductivity_ratio);
}

bool TouchRegion::contains(Point p) const {
  return std::hypot(p.x - center_.x, p.y - center_.y) <= 0.5 * diameter_;
}

bool TouchRegion::inside_domain() const {
  const double r = 0.5 * diameter_;
  return center_.x - r >= 0.0 && center_.x + r <= kSize && center_.y - r >= 0.0 && center_.y + r <= kSize;
}

bool Annulus::contains(Point p) const {
  const double d = std::hypot(p.x - center.x, p.y - center.y);
  const double ro = 0.5 * outer_diameter;
  return d <= ro && d >= ro - width;
}

bool Annulus::inside_domain() const {
  const double r = 0.5 * outer_diameter;
  return center.x - r >= 0.0 && center.x + r <= kSize && center.y - r >= 0.0 && center.y + r <= kSize;
}

bool LShape::contains(Point p) const {
  const Point q = local_frame(p, corner, angle);
  const bool bar_a = q.x >= 0 && q.x <= length_a && q.y >= 0 && q.y <= width_a;
  const bool bar_b = q.x >= 0 && q.x <= width_b && q.y >= 0 && q.y <= length_b;
  return bar_a || bar_b;
}

bool LShape::inside_domain() const {
  const std::array<Point, 6> corners{Point{0, 0},          Point{length_a, 0}, Point{length_a, width_a},
                                     Point{0, length_b}, Point{width_b, length_b}, Point{width_b, 0}};
  return std::all_of(corners.begin(), corners.end(),
                     [&](Point q) { return in_domain(world_frame(q, corner, angle)); });
}

double conductivity_ratio(const Touch& t) {
  return std::visit(
      [](const auto& s) {
        if constexpr (std::is_same_v<std::decay_t<decltype(s)>, TouchRegion>) return s.conductivity_ratio();
        else return s.conductivity_ratio;
      },
      t);
}

bool contains(const Touch& t, Point p) {
  return std::visit([p](const auto& s) { return s.contains(p); }, t);
}

void Phantom::validate() const {
  if (shape_class == ShapeClass::circular && touches.size() > static_cast<std::size_t>(kMaxTouches))
    throw std::invalid_argument("circular phantoms carry at most 5 touches");
  for (const auto& t : touches) {
    const bool ok = std::visit([](const auto& s) { return s.inside_domain(); }, t);
    if (!ok) throw std::invalid_argument("touch region leaves the sensing domain");
  }
}

Phantom sample_phantom(std::uint64_t seed, int n_touches, ShapeClass shape_class) {
  if (n_touches < 1) throw std::invalid_argument("a phantom needs at least one touch");
  Phantom p;
  p.shape_class = shape_class;
  auto rng = phantom_rng(seed, n_touches, shape_class);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  switch (shape_class) {
    case ShapeClass::circular: {
      if (n_touches > kMaxTouches) throw std::invalid_argument("circular phantoms carry at most 5 touches");
      for (int i = 0; i < n_touches; ++i) {
        const double d = uniform(kMinDiameter, kMaxDiameter);
        const double r = 0.5 * d;
        const Point c{uniform(r, kSize - r), uniform(r, kSize - r)};
        p.touches.emplace_back(TouchRegion(c, d, sample_ratio(rng)));
      }
      break;
    }
    case ShapeClass::annular: {
      if (n_touches != 1) throw std::invalid_argument("annular phantoms are single templates");
      Annulus a;
      a.outer_diameter = uniform(20.0, 35.0);
      a.width = uniform(4.0, 8.0);
      const double r = 0.5 * a.outer_diameter;
      a.center = {uniform(r, kSize - r), uniform(r, kSize - r)};
      a.conductivity_ratio = sample_ratio(rng);
      p.touches.emplace_back(a);
      break;
    }
    case ShapeClass::l_shape: {
      if (n_touches != 1) throw std::invalid_argument("L-shaped phantoms are single templates");
      LShape l;
      l.length_a = uniform(10.0, 40.0);
      l.length_b = uniform(10.0, 40.0);
      l.width_a = uniform(8.0, 12.0);
      l.width_b = uniform(8.0, 12.0);
      l.conductivity_ratio = sample_ratio(rng);
      l.angle = uniform(0.0, 2.0 * std::numbers::pi);
      int tries = 0;
      do {
        if (++tries > 10000) throw std::logic_error("could not place L-shaped touch");
        l.corner = {uniform(0.0, kSize), uniform(0.0, kSize)};
      } while (!l.inside_domain());
      p.touches.emplace_back(l);
      break;
    }
  }
  return p;
}

Grid2D<double> rasterize(const Phantom& phantom) {
  Grid2D<double> map(kMapSize, kMapSize, 0.0);
  const double w = kSize / kMapSize;
  for (int r = 0; r < kMapSize; ++r) {
    for (int c = 0; c < kMapSize; ++c) {
      const Point centre{(c + 0.5) * w, (r + 0.5) * w};
      for (const auto& t : phantom.touches)
        if (contains(t, centre)) map(r, c) = std::abs(conductivity_ratio(t) - 1.0);
    }
  }
  return map;
}

Grid2D<float> normalize_map(const Grid2D<double>& raw) {
  Grid2D<float> out(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out.storage()[i] = static_cast<float>(std::clamp(raw.storage()[i] / kMaxContrast, 0.0, 1.0));
  return out;
}

Grid2D<double> conductivity_grid(const Phantom& phantom, double background) {
  Grid2D<double> grid(kMapSize, kMapSize, background);
  const double w = kSize / kMapSize;
  for (int r = 0; r < kMapSize; ++r) {
    for (int c = 0; c < kMapSize; ++c) {
      const Point centre{(c + 0.5) * w, (r + 0.5) * w};
      for (const auto& t : phantom.touches)
        if (contains(t, centre)) grid(r, c) = background * conductivity_ratio(t);
    }
  }
  return grid;
}

void add_noise(std::vector<double>& values, double snr_db, std::mt19937_64& rng) {
  double power = 0.0;
  for (double v : values) power += v * v;
  power /= static_cast<double>(values.size());
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : values) v += n(rng);
}

SimulationContext SimulationContext::create(int refinement_level, const forward::DrivePattern& pattern,
                                            const forward::SolverOptions& options) {
  SimulationContext ctx;
  ctx.mesh = forward::generate_mesh(refinement_level);
  ctx.pattern = pattern;
  ctx.options = options;
  ctx.reference = forward::assemble_and_solve(ctx.mesh, forward::ConductivityField::uniform(ctx.mesh),
                                              pattern, options);
  return ctx;
}

namespace {

forward::VoltageFrame absolute_frame(const Phantom& phantom, const SimulationContext& ctx) {
  if (phantom.touches.empty()) return ctx.reference;
  const auto field = forward::pixel_to_element(conductivity_grid(phantom), ctx.mesh);
  return forward::assemble_and_solve(ctx.mesh, field, ctx.pattern, ctx.options);
}

forward::VoltageFrame noisy_difference(const forward::VoltageFrame& frame, const forward::VoltageFrame& ref,
                                       double snr_db, std::uint64_t noise_seed) {
  std::mt19937_64 rng(noise_seed);
  auto a = frame.values;
  auto b = ref.values;
  add_noise(a, snr_db, rng);
  add_noise(b, snr_db, rng);
  forward::VoltageFrame out;
  out.is_difference = true;
  for (int k = 0; k < forward::kMeasurements; ++k) out.values[k] = a[k] - b[k];
  return out;
}

}  // namespace

Sample simulate_sample(const Phantom& phantom, const SimulationContext& ctx, const NoiseSpec& noise,
                       std::uint64_t noise_seed) {
  phantom.validate();
  const auto frame = absolute_frame(phantom, ctx);
  Sample s;
  s.map = normalize_map(rasterize(phantom));
  s.difference = noise.snr_db ? noisy_difference(frame, ctx.reference, *noise.snr_db, noise_seed)
                              : frame.difference_from(ctx.reference);
  return s;
}

SamplePair simulate_sample_pair(const Phantom& phantom, const SimulationContext& ctx, double snr_db,
                                std::uint64_t noise_seed) {
  phantom.validate();
  const auto frame = absolute_frame(phantom, ctx);
  return {frame.difference_from(ctx.reference), noisy_difference(frame, ctx.reference, snr_db, noise_seed),
          normalize_map(rasterize(phantom))};
}

}  // namespace ptet::data

#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptet/core/grid.hpp"
#include "ptet/forward/mesh.hpp"

namespace ptet::forward {

inline constexpr int kMeasPerDrive = 13;
inline constexpr int kRawMeasurements = kElectrodes * kMeasPerDrive;  // 208
inline constexpr int kMeasurements = kRawMeasurements / 2;             // 104
inline constexpr int kPixels = 48;
inline constexpr double kBackgroundConductivity = 0.00312;  // S/m

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-element conductivity in S/m. Construction rejects non-positive or
// non-finite values.
class ConductivityField {
 public:
  ConductivityField() = default;
  explicit ConductivityField(std::vector<double> values);
  static ConductivityField uniform(const Mesh& mesh, double sigma = kBackgroundConductivity);

  std::span<const double> values() const { return values_; }
  double operator[](int e) const { return values_[e]; }
  int size() const { return static_cast<int>(values_.size()); }
  ConductivityField scaled(double k) const;

 private:
  std::vector<double> values_;
};

// Adjacent drive, adjacent measurement. Drive pair d injects +current at
// electrode d and withdraws it at d+1 (mod 16).
struct DrivePattern {
  double current = 1e-3;  // A

  // True when measurement pair m shares an electrode with drive pair d.
  static constexpr bool touches_drive(int d, int m) {
    return m == d || m == (d + 1) % kElectrodes || (m + 1) % kElectrodes == d;
  }
};

struct MeasurementPair {
  int drive = 0;
  int meas = 0;
};

// Raw ordering: drive-major, measurement pairs ascending, skipping pairs that
// touch a drive electrode (16 x 13 = 208).
const std::array<MeasurementPair, kRawMeasurements>& raw_measurement_order();
// Reciprocity-reduced ordering: the pairs of raw_measurement_order() with
// meas > drive (104). Entry k is consumed k-th by the EIM construction.
const std::array<MeasurementPair, kMeasurements>& reduced_measurement_order();
// Index of (drive, meas) in the raw ordering, or -1.
int raw_index(int drive, int meas);

struct VoltageFrame {
  std::vector<double> values = std::vector<double>(kMeasurements, 0.0);
  bool is_difference = false;

  VoltageFrame difference_from(const VoltageFrame& reference) const;
};

struct SolverOptions {
  double contact_impedance = 1e-2;  // Ohm m, uniform over electrodes
};

// Complete electrode model, P1 Galerkin. One sparse factorisation serves all
// 16 injections. Immutable after construction.
class ForwardSolver {
 public:
  ForwardSolver(const Mesh& mesh, const ConductivityField& field, const DrivePattern& pattern = {},
                const SolverOptions& options = {});

  // 208 adjacent differential voltages in raw ordering.
  std::vector<double> raw_measurements() const;
  // Reciprocal pairs averaged.
  VoltageFrame frame() const;
  // Voltage across the driving electrodes for injection d.
  double drive_voltage(int d) const;
  // Electrode potentials, one column per injection.
  Eigen::MatrixXd electrode_potentials() const;
  // Nodal potentials for injection d (ground node 0 included as 0).
  Eigen::VectorXd node_potentials(int d) const;

  // d(frame)/d(sigma_e): 104 x elements, adjoint (lead-field) method.
  Eigen::MatrixXd jacobian_elements() const;
  // Element Jacobian accumulated onto the 48x48 pixel basis (104 x 2304),
  // pixel index = row * 48 + col with rows along +y.
  Eigen::MatrixXd jacobian_pixels(int pixels = kPixels) const;

  // Sum of the assembled right-hand side for injection d (zero by current
  // conservation).
  double rhs_sum(int d) const;

  const Mesh& mesh() const { return *mesh_; }

 private:
  const Mesh* mesh_;
  DrivePattern pattern_;
  Eigen::MatrixXd solution_;  // (nodes - 1 + 16) x 16
  Eigen::MatrixXd rhs_;
};

VoltageFrame assemble_and_solve(const Mesh& mesh, const ConductivityField& field,
                                const DrivePattern& pattern = {}, const SolverOptions& options = {});

Eigen::MatrixXd compute_jacobian(const Mesh& mesh, const ConductivityField& field,
                                 const DrivePattern& pattern = {}, const SolverOptions& options = {});

// Pixel containing point p for an n x n grid over the domain.
std::pair<int, int> pixel_of(const Point& p, int pixels = kPixels);

// Each element takes the conductivity of the pixel containing its centroid.
ConductivityField pixel_to_element(const Grid2D<double>& grid, const Mesh& mesh);

// Element -> flat pixel index map used by pixel_to_element and jacobian_pixels.
std::vector<int> element_pixels(const Mesh& mesh, int pixels = kPixels);

}  // namespace ptet::forward

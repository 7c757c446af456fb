#include "ptet/forward/fem.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace ptet::forward {

ConductivityField::ConductivityField(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t e = 0; e < values_.size(); ++e) {
    if (!(values_[e] > 0.0) || !std::isfinite(values_[e])) {
      std::ostringstream msg;
      msg << "conductivity must be positive and finite (element " << e << " = " << values_[e] << ")";
      throw SolverError(msg.str());
    }
  }
}

ConductivityField ConductivityField::uniform(const Mesh& mesh, double sigma) {
  return ConductivityField(std::vector<double>(mesh.elements.size(), sigma));
}

ConductivityField ConductivityField::scaled(double k) const {
  std::vector<double> v = values_;
  for (auto& x : v) x *= k;
  return ConductivityField(std::move(v));
}

const std::array<MeasurementPair, kRawMeasurements>& raw_measurement_order() {
  static const auto order = [] {
    std::array<MeasurementPair, kRawMeasurements> o{};
    int k = 0;
    for (int d = 0; d < kElectrodes; ++d)
      for (int m = 0; m < kElectrodes; ++m)
        if (!DrivePattern::touches_drive(d, m)) o[k++] = {d, m};
    return o;
  }();
  return order;
}

const std::array<MeasurementPair, kMeasurements>& reduced_measurement_order() {
  static const auto order = [] {
    std::array<MeasurementPair, kMeasurements> o{};
    int k = 0;
    for (const auto& p : raw_measurement_order())
      if (p.meas > p.drive) o[k++] = p;
    return o;
  }();
  return order;
}

int raw_index(int drive, int meas) {
  if (drive < 0 || drive >= kElectrodes || meas < 0 || meas >= kElectrodes) return -1;
  if (DrivePattern::touches_drive(drive, meas)) return -1;
  int skipped = 0;
  for (int m = 0; m < meas; ++m) skipped += DrivePattern::touches_drive(drive, m) ? 1 : 0;
  return drive * kMeasPerDrive + meas - skipped;
}

VoltageFrame VoltageFrame::difference_from(const VoltageFrame& reference) const {
  VoltageFrame out;
  out.is_difference = true;
  for (int k = 0; k < kMeasurements; ++k) out.values[k] = values[k] - reference.values[k];
  return out;
}

namespace {

struct ElementGeometry {
  double area;
  std::array<double, 3> b, c;  // grad phi_i = (b_i, c_i) / (2 area)
};

ElementGeometry geometry(const Mesh& mesh, int e) {
  const auto& t = mesh.elements[e];
  ElementGeometry g{};
  g.area = mesh.signed_area(e);
  for (int i = 0; i < 3; ++i) {
    const Point& pj = mesh.nodes[t[(i + 1) % 3]];
    const Point& pk = mesh.nodes[t[(i + 2) % 3]];
    g.b[i] = pj.y - pk.y;
    g.c[i] = pk.x - pj.x;
  }
  return g;
}

}  // namespace

ForwardSolver::ForwardSolver(const Mesh& mesh, const ConductivityField& field,
                             const DrivePattern& pattern, const SolverOptions& options)
    : mesh_(&mesh), pattern_(pattern) {
  if (field.size() != mesh.element_count())
    throw SolverError("conductivity field does not match the mesh");
  if (!(options.contact_impedance > 0.0)) throw SolverError("contact impedance must be positive");
  if (!(pattern.current > 0.0)) throw SolverError("drive current must be positive");

  const int nodes = mesh.node_count();
  const int unknowns = nodes - 1 + kElectrodes;  // node 0 grounded
  auto node_dof = [](int i) { return i - 1; };
  auto electrode_dof = [nodes](int l) { return nodes - 1 + l; };

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh.elements.size() * 9 + 64 * kElectrodes);

  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto g = geometry(mesh, e);
    if (!(g.area > 0.0)) throw SolverError("degenerate or inverted element in mesh");
    const double s = field[e] / (4.0 * g.area);
    const auto& t = mesh.elements[e];
    for (int i = 0; i < 3; ++i) {
      if (t[i] == 0) continue;
      for (int j = 0; j < 3; ++j) {
        if (t[j] == 0) continue;
        trips.emplace_back(node_dof(t[i]), node_dof(t[j]), s * (g.b[i] * g.b[j] + g.c[i] * g.c[j]));
      }
    }
  }

  // Contact terms. Edge lengths in metres so that 1/z (S/m) yields siemens.
  const double admittance = 1.0 / options.contact_impedance;
  for (int l = 0; l < kElectrodes; ++l) {
    if (mesh.electrodes[l].empty()) throw SolverError("electrode without boundary contact");
    const int E = electrode_dof(l);
    for (const auto& edge : mesh.electrodes[l]) {
      const Point &pa = mesh.nodes[edge.a], &pb = mesh.nodes[edge.b];
      const double h = std::hypot(pb.x - pa.x, pb.y - pa.y) * 1e-3;
      const double t0 = edge.t0, t1 = edge.t1;
      const double p1 = t1 - t0;
      const double p2 = (t1 * t1 - t0 * t0) / 2.0;
      const double p3 = (t1 * t1 * t1 - t0 * t0 * t0) / 3.0;
      const double aa = p1 - 2.0 * p2 + p3;  // int (1-t)^2
      const double ab = p2 - p3;             // int t(1-t)
      const double bb = p3;                  // int t^2
      const double a1 = p1 - p2;             // int (1-t)
      const double b1 = p2;                  // int t
      const double w = admittance * h;
      const std::array<int, 2> nd{edge.a, edge.b};
      const double mass[2][2] = {{aa, ab}, {ab, bb}};
      const double lin[2] = {a1, b1};
      for (int i = 0; i < 2; ++i) {
        if (nd[i] == 0) continue;
        for (int j = 0; j < 2; ++j)
          if (nd[j] != 0) trips.emplace_back(node_dof(nd[i]), node_dof(nd[j]), w * mass[i][j]);
        trips.emplace_back(node_dof(nd[i]), E, -w * lin[i]);
        trips.emplace_back(E, node_dof(nd[i]), -w * lin[i]);
      }
      trips.emplace_back(E, E, w * p1);
    }
  }

  Eigen::SparseMatrix<double> A(unknowns, unknowns);
  A.setFromTriplets(trips.begin(), trips.end());

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw SolverError("sparse factorisation failed");
  const auto& D = ldlt.vectorD();
  const double dmax = D.cwiseAbs().maxCoeff();
  const double dmin = D.minCoeff();
  if (!(dmin > 1e-14 * dmax)) throw SolverError("ill-conditioned assembly (non-positive pivot)");

  rhs_ = Eigen::MatrixXd::Zero(unknowns, kElectrodes);
  for (int d = 0; d < kElectrodes; ++d) {
    rhs_(electrode_dof(d), d) = pattern.current;
    rhs_(electrode_dof((d + 1) % kElectrodes), d) = -pattern.current;
  }
  solution_ = ldlt.solve(rhs_);
  if (ldlt.info() != Eigen::Success || !solution_.allFinite())
    throw SolverError("sparse solve did not converge");
}

Eigen::MatrixXd ForwardSolver::electrode_potentials() const {
  return solution_.bottomRows(kElectrodes);
}

Eigen::VectorXd ForwardSolver::node_potentials(int d) const {
  Eigen::VectorXd u(mesh_->node_count());
  u(0) = 0.0;
  u.tail(mesh_->node_count() - 1) = solution_.col(d).head(mesh_->node_count() - 1);
  return u;
}

double ForwardSolver::rhs_sum(int d) const { return rhs_.col(d).sum(); }

std::vector<double> ForwardSolver::raw_measurements() const {
  const int off = mesh_->node_count() - 1;
  std::vector<double> raw(kRawMeasurements);
  const auto& order = raw_measurement_order();
  for (int k = 0; k < kRawMeasurements; ++k) {
    const auto [d, m] = order[k];
    raw[k] = solution_(off + m, d) - solution_(off + (m + 1) % kElectrodes, d);
  }
  return raw;
}

VoltageFrame ForwardSolver::frame() const {
  const auto raw = raw_measurements();
  VoltageFrame f;
  const auto& order = reduced_measurement_order();
  for (int k = 0; k < kMeasurements; ++k) {
    const auto [d, m] = order[k];
    f.values[k] = 0.5 * (raw[raw_index(d, m)] + raw[raw_index(m, d)]);
  }
  return f;
}

double ForwardSolver::drive_voltage(int d) const {
  const int off = mesh_->node_count() - 1;
  return solution_(off + d, d) - solution_(off + (d + 1) % kElectrodes, d);
}

Eigen::MatrixXd ForwardSolver::jacobian_elements() const {
  const Mesh& mesh = *mesh_;
  const auto& order = reduced_measurement_order();
  Eigen::MatrixXd J(kMeasurements, mesh.element_count());
  Eigen::Matrix<double, kElectrodes, 2> grad;
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto g = geometry(mesh, e);
    const auto& t = mesh.elements[e];
    grad.setZero();
    for (int i = 0; i < 3; ++i) {
      if (t[i] == 0) continue;
      const auto row = solution_.row(t[i] - 1);
      for (int d = 0; d < kElectrodes; ++d) {
        grad(d, 0) += row(d) * g.b[i];
        grad(d, 1) += row(d) * g.c[i];
      }
    }
    grad /= 2.0 * g.area;
    for (int k = 0; k < kMeasurements; ++k) {
      const auto [d, m] = order[k];
      J(k, e) = -g.area * grad.row(d).dot(grad.row(m)) / pattern_.current;
    }
  }
  return J;
}

Eigen::MatrixXd ForwardSolver::jacobian_pixels(int pixels) const {
  const auto Je = jacobian_elements();
  const auto map = element_pixels(*mesh_, pixels);
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(kMeasurements, pixels * pixels);
  for (int e = 0; e < mesh_->element_count(); ++e) J.col(map[e]) += Je.col(e);
  return J;
}

VoltageFrame assemble_and_solve(const Mesh& mesh, const ConductivityField& field,
                                const DrivePattern& pattern, const SolverOptions& options) {
  return ForwardSolver(mesh, field, pattern, options).frame();
}

Eigen::MatrixXd compute_jacobian(const Mesh& mesh, const ConductivityField& field,
                                 const DrivePattern& pattern, const SolverOptions& options) {
  return ForwardSolver(mesh, field, pattern, options).jacobian_pixels();
}

std::pair<int, int> pixel_of(const Point& p, int pixels) {
  const double w = kDomainSize / pixels;
  const int c = static_cast<int>(std::floor(p.x / w));
  const int r = static_cast<int>(std::floor(p.y / w));
  if (c < 0 || c > pixels || r < 0 || r > pixels)
    throw std::out_of_range("point outside the sensing domain");
  return {std::min(r, pixels - 1), std::min(c, pixels - 1)};
}

std::vector<int> element_pixels(const Mesh& mesh, int pixels) {
  std::vector<int> map(mesh.elements.size());
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto [r, c] = pixel_of(mesh.centroid(e), pixels);
    map[e] = r * pixels + c;
  }
  return map;
}

ConductivityField pixel_to_element(const Grid2D<double>& grid, const Mesh& mesh) {
  if (grid.rows() != grid.cols()) throw std::invalid_argument("pixel grid must be square");
  const auto map = element_pixels(mesh, grid.rows());
  std::vector<double> v(map.size());
  for (std::size_t e = 0; e < map.size(); ++e) v[e] = grid.values()[map[e]];
  return ConductivityField(std::move(v));
}

}  // namespace ptet::forward

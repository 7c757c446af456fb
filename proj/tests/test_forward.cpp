#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include <Eigen/Dense>

#include "doctest.h"
#include "ptet/core/array_io.hpp"
#include "ptet/forward/fem.hpp"

using namespace ptet;
using namespace ptet::forward;

namespace {

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }

// Dense complete-electrode-model oracle. Same physics, different gauge: the
// electrode potentials are constrained to sum to zero through a Lagrange
// multiplier instead of grounding a node, and the system is solved densely.
std::vector<double> dense_raw_oracle(const Mesh& mesh, const ConductivityField& sigma, double z,
                                     double current) {
  const int n = mesh.node_count();
  const int size = n + kElectrodes + 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(size, size);
  for (int e = 0; e < mesh.element_count(); ++e) {
    const auto& t = mesh.elements[e];
    Eigen::Matrix3d P;
    for (int i = 0; i < 3; ++i) P.row(i) << 1.0, mesh.nodes[t[i]].x, mesh.nodes[t[i]].y;
    const double area = 0.5 * P.determinant();
    const Eigen::Matrix3d C = P.inverse();  // rows 1,2 hold basis gradients
    const Eigen::Matrix<double, 2, 3> G = C.bottomRows<2>();
    const Eigen::Matrix3d K = sigma[e] * area * G.transpose() * G;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) A(t[i], t[j]) += K(i, j);
  }
  // Contact integrals by 3-point Gauss-Legendre on the covered sub-interval.
  const double gx[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
  const double gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  for (int l = 0; l < kElectrodes; ++l) {
    for (const auto& edge : mesh.electrodes[l]) {
      const double h = std::hypot(mesh.nodes[edge.b].x - mesh.nodes[edge.a].x,
                                  mesh.nodes[edge.b].y - mesh.nodes[edge.a].y) * 1e-3;
      for (int q = 0; q < 3; ++q) {
        const double t = edge.t0 + (edge.t1 - edge.t0) * 0.5 * (gx[q] + 1.0);
        const double w = gw[q] * 0.5 * (edge.t1 - edge.t0) * h / z;
        const double phi[2] = {1.0 - t, t};
        const int nd[2] = {edge.a, edge.b};
        for (int i = 0; i < 2; ++i) {
          for (int j = 0; j < 2; ++j) A(nd[i], nd[j]) += w * phi[i] * phi[j];
          A(nd[i], n + l) -= w * phi[i];
          A(n + l, nd[i]) -= w * phi[i];
        }
        A(n + l, n + l) += w;
      }
    }
    A(n + l, size - 1) = 1.0;
    A(size - 1, n + l) = 1.0;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  std::vector<double> raw;
  for (int d = 0; d < kElectrodes; ++d) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(size);
    b(n + d) = current;
    b(n + (d + 1) % kElectrodes) = -current;
    const Eigen::VectorXd x = lu.solve(b);
    for (int m = 0; m < kElectrodes; ++m)
      if (!DrivePattern::touches_drive(d, m)) raw.push_back(x(n + m) - x(n + (m + 1) % kElectrodes));
  }
  return raw;
}

Grid2D<double> disk_grid(double cx, double cy, double radius, double ratio) {
  Grid2D<double> g(kPixels, kPixels, kBackgroundConductivity);
  const double w = kDomainSize / kPixels;
  for (int r = 0; r < kPixels; ++r)
    for (int c = 0; c < kPixels; ++c)
      if (std::hypot((c + 0.5) * w - cx, (r + 0.5) * w - cy) <= radius)
        g(r, c) = kBackgroundConductivity * ratio;
  return g;
}

}  // namespace

TEST_CASE("mesh counts and invariants") {
  const auto m1 = generate_mesh(1);
  CHECK(m1.element_count() == 32);
  CHECK(m1.node_count() == 25);

  const auto m12 = generate_mesh(12);
  CHECK(m12.element_count() == 2 * 48 * 48);
  CHECK(m12.element_count() == 4608);

  for (const auto* m : {&m1, &m12}) {
    for (int e = 0; e < m->element_count(); ++e) REQUIRE(m->signed_area(e) > 0.0);
    std::map<std::pair<int, int>, int> owner;
    for (int l = 0; l < kElectrodes; ++l) {
      CHECK_FALSE(m->electrodes[l].empty());
      CHECK(m->electrode_length(l) == doctest::Approx(15.0).epsilon(1e-12));
      for (const auto& e : m->electrodes[l]) {
        auto [it, fresh] = owner.emplace(std::minmax(e.a, e.b), l);
        CHECK(fresh);  // each boundary edge belongs to at most one electrode
      }
    }
  }
  CHECK_THROWS_AS(generate_mesh(0), std::invalid_argument);
}

TEST_CASE("electrodes are ordered counter-clockwise from the (0,0) corner") {
  const auto mesh = generate_mesh(4);
  auto centre = [&](int l) {
    Point p;
    double len = 0;
    for (const auto& e : mesh.electrodes[l]) {
      const auto &a = mesh.nodes[e.a], &b = mesh.nodes[e.b];
      const double tm = 0.5 * (e.t0 + e.t1), w = e.t1 - e.t0;
      p.x += w * (a.x + tm * (b.x - a.x));
      p.y += w * (a.y + tm * (b.y - a.y));
      len += w;
    }
    return Point{p.x / len, p.y / len};
  };
  CHECK(centre(0).x == doctest::Approx(12.5));
  CHECK(centre(0).y == doctest::Approx(0.0));
  CHECK(centre(4).x == doctest::Approx(100.0));
  CHECK(centre(4).y == doctest::Approx(12.5));
  CHECK(centre(8).x == doctest::Approx(87.5));
  CHECK(centre(8).y == doctest::Approx(100.0));
  CHECK(centre(15).x == doctest::Approx(0.0));
  CHECK(centre(15).y == doctest::Approx(12.5));
}

TEST_CASE("measurement orderings") {
  const auto& raw = raw_measurement_order();
  const auto& red = reduced_measurement_order();
  CHECK(raw.size() == 208);
  CHECK(red.size() == 104);
  CHECK(raw[0].drive == 0);
  CHECK(raw[0].meas == 2);
  CHECK(raw[12].meas == 14);
  CHECK(raw[13].drive == 1);
  CHECK(raw[13].meas == 3);
  for (int k = 0; k < 208; ++k) CHECK(raw_index(raw[k].drive, raw[k].meas) == k);
  CHECK(raw_index(3, 4) == -1);
  CHECK(raw_index(3, 2) == -1);
  CHECK(red[0].drive == 0);
  CHECK(red[12].meas == 14);
  CHECK(red[13].drive == 1);
  CHECK(red[103].drive == 13);
  CHECK(red[103].meas == 15);
}

TEST_CASE("sparse solver agrees with the dense oracle") {
  const auto mesh = generate_mesh(2);
  SUBCASE("homogeneous") {
    const auto sigma = ConductivityField::uniform(mesh);
    const auto oracle = dense_raw_oracle(mesh, sigma, 1e-2, 1e-3);
    const auto raw = ForwardSolver(mesh, sigma).raw_measurements();
    for (int k = 0; k < kRawMeasurements; ++k) CHECK(rel_diff(raw[k], oracle[k]) < 1e-9);
  }
  SUBCASE("inclusion") {
    const auto sigma = pixel_to_element(disk_grid(35, 60, 20, 2.0), mesh);
    const auto oracle = dense_raw_oracle(mesh, sigma, 1e-2, 1e-3);
    const auto raw = ForwardSolver(mesh, sigma).raw_measurements();
    for (int k = 0; k < kRawMeasurements; ++k) CHECK(rel_diff(raw[k], oracle[k]) < 1e-9);
  }
}

TEST_CASE("reciprocity holds before reduction") {
  const auto mesh = generate_mesh(6);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  std::vector<double> v(mesh.element_count());
  for (auto& x : v) x = kBackgroundConductivity * u(rng);
  for (const auto& sigma : {ConductivityField::uniform(mesh), ConductivityField(v)}) {
    const auto raw = ForwardSolver(mesh, sigma).raw_measurements();
    double worst = 0;
    for (const auto& p : raw_measurement_order())
      worst = std::max(worst, rel_diff(raw[raw_index(p.drive, p.meas)], raw[raw_index(p.meas, p.drive)]));
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("current conservation per injection") {
  const auto mesh = generate_mesh(3);
  const ForwardSolver solver(mesh, ConductivityField::uniform(mesh));
  for (int d = 0; d < kElectrodes; ++d) CHECK(std::abs(solver.rhs_sum(d)) == 0.0);
}

TEST_CASE("uniform admittance scaling scales voltages by 1/k") {
  const auto mesh = generate_mesh(4);
  const auto sigma = pixel_to_element(disk_grid(60, 40, 12, 0.3), mesh);
  const auto base = assemble_and_solve(mesh, sigma, {}, {1e-2});
  for (double k : {0.5, 3.0, 17.0}) {
    // Conductivity and contact admittance scale together; the complete
    // electrode model is homogeneous of degree -1 only in both jointly.
    const auto scaled = assemble_and_solve(mesh, sigma.scaled(k), {}, {1e-2 / k});
    for (int i = 0; i < kMeasurements; ++i) CHECK(rel_diff(scaled.values[i] * k, base.values[i]) < 1e-10);
  }
}

TEST_CASE("difference frame localises an off-centre inclusion") {
  const auto mesh = generate_mesh(4);
  const auto ref = assemble_and_solve(mesh, ConductivityField::uniform(mesh));
  // Inclusion next to electrodes 1 and 2 on the bottom side.
  const auto sigma = pixel_to_element(disk_grid(50, 14, 8, 2.0), mesh);
  const auto diff = assemble_and_solve(mesh, sigma).difference_from(ref);
  CHECK(diff.is_difference);
  int best = 0;
  for (int k = 1; k < kMeasurements; ++k)
    if (std::abs(diff.values[k]) > std::abs(diff.values[best])) best = k;
  CHECK(std::abs(diff.values[best]) > 0.0);
  const auto [d, m] = reduced_measurement_order()[best];
  auto near = [](int pair) { return pair >= 0 && pair <= 2; };  // pairs (0,1),(1,2),(2,3)
  CHECK((near(d) || near(m)));

  // The same comparison against the dense oracle.
  const auto dense_ref = dense_raw_oracle(mesh, ConductivityField::uniform(mesh), 1e-2, 1e-3);
  const auto dense_inc = dense_raw_oracle(mesh, sigma, 1e-2, 1e-3);
  int dense_best = 0;
  double dense_max = 0;
  for (int k = 0; k < kMeasurements; ++k) {
    const auto [dd, mm] = reduced_measurement_order()[k];
    const int r = raw_index(dd, mm);
    if (std::abs(dense_inc[r] - dense_ref[r]) > dense_max) {
      dense_max = std::abs(dense_inc[r] - dense_ref[r]);
      dense_best = k;
    }
  }
  CHECK(dense_best == best);
}

TEST_CASE("adjoint Jacobian matches finite differences") {
  const auto mesh = generate_mesh(3);
  Grid2D<double> grid(kPixels, kPixels, kBackgroundConductivity);
  const ForwardSolver solver(mesh, pixel_to_element(grid, mesh));
  const Eigen::MatrixXd J = solver.jacobian_pixels();
  const auto owners = element_pixels(mesh);

  for (int e : {0, 17, 101, 143, 250}) {
    const int p = owners[e];
    const double delta = 1e-6 * kBackgroundConductivity;
    auto g_plus = grid, g_minus = grid;
    g_plus.storage()[p] += delta;
    g_minus.storage()[p] -= delta;
    const auto fp = assemble_and_solve(mesh, pixel_to_element(g_plus, mesh));
    const auto fm = assemble_and_solve(mesh, pixel_to_element(g_minus, mesh));
    Eigen::VectorXd fd(kMeasurements);
    for (int k = 0; k < kMeasurements; ++k) fd(k) = (fp.values[k] - fm.values[k]) / (2 * delta);
    const double err = (fd - J.col(p)).norm() / J.col(p).norm();
    CAPTURE(p);
    CHECK(err < 1e-3);
  }

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(J.cols());
  CHECK((J * zero).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Jacobian column sums share the square's symmetry") {
  const auto mesh = generate_mesh(12);
  const Eigen::MatrixXd J = compute_jacobian(mesh, ConductivityField::uniform(mesh));
  const Eigen::VectorXd s = J.colwise().sum();
  const double scale = s.cwiseAbs().maxCoeff();
  const int n = kPixels;
  auto at = [&](int r, int c) { return s(r * n + c); };
  double worst = 0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double v = at(r, c);
      for (double w : {at(c, n - 1 - r), at(n - 1 - r, n - 1 - c), at(n - 1 - c, r), at(r, n - 1 - c),
                       at(n - 1 - r, c), at(c, r), at(n - 1 - c, n - 1 - r)})
        worst = std::max(worst, std::abs(v - w) / scale);
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("pixel_to_element") {
  const auto mesh = generate_mesh(12);
  SUBCASE("uniform grid gives a uniform field") {
    const auto f = pixel_to_element(Grid2D<double>(kPixels, kPixels, 0.5), mesh);
    for (double v : f.values()) CHECK(v == 0.5);
  }
  SUBCASE("single pixel anomaly changes only its elements") {
    Grid2D<double> g(kPixels, kPixels, 1.0);
    g(10, 30) = 7.0;
    const auto f = pixel_to_element(g, mesh);
    int changed = 0;
    for (int e = 0; e < mesh.element_count(); ++e) {
      const auto [r, c] = pixel_of(mesh.centroid(e));
      if (r == 10 && c == 30) {
        CHECK(f[e] == 7.0);
        ++changed;
      } else {
        CHECK(f[e] == 1.0);
      }
    }
    CHECK(changed == 2);
  }
  SUBCASE("checkerboard histogram at refinement 24 matches by area") {
    const auto fine = generate_mesh(24);
    Grid2D<double> g(kPixels, kPixels);
    for (int r = 0; r < kPixels; ++r)
      for (int c = 0; c < kPixels; ++c) g(r, c) = ((r + c) % 2) ? 2.0 : 1.0;
    const auto f = pixel_to_element(g, fine);
    double area_hi = 0, total = 0;
    for (int e = 0; e < fine.element_count(); ++e) {
      total += fine.signed_area(e);
      if (f[e] == 2.0) area_hi += fine.signed_area(e);
    }
    CHECK(total == doctest::Approx(1e4));
    CHECK(area_hi / total == doctest::Approx(0.5).epsilon(1e-9));
  }
  CHECK_THROWS_AS(pixel_of({-1.0, 5.0}), std::out_of_range);
}

TEST_CASE("non-positive conductivity is rejected") {
  const auto mesh = generate_mesh(1);
  std::vector<double> v(mesh.element_count(), 1.0);
  v[3] = 0.0;
  CHECK_THROWS_AS(ConductivityField{v}, SolverError);
  v[3] = std::nan("");
  CHECK_THROWS_AS(ConductivityField{v}, SolverError);
  CHECK_THROWS_AS(ForwardSolver(mesh, ConductivityField(std::vector<double>(5, 1.0))), SolverError);
}

TEST_CASE("difference-frame mesh convergence is monotone") {
  // Smooth bump evaluated at element centroids, so refinement only reduces
  // discretisation error.
  auto bump = [](const Mesh& m) {
    std::vector<double> v(m.element_count());
    for (int e = 0; e < m.element_count(); ++e) {
      const auto c = m.centroid(e);
      const double r2 = (c.x - 38) * (c.x - 38) + (c.y - 61) * (c.y - 61);
      v[e] = kBackgroundConductivity * (1.0 + 1.5 * std::exp(-r2 / (2 * 9.0 * 9.0)));
    }
    return ConductivityField(std::move(v));
  };
  auto diff = [&](int level) {
    const auto m = generate_mesh(level);
    const auto ref = assemble_and_solve(m, ConductivityField::uniform(m));
    const auto f = assemble_and_solve(m, bump(m)).difference_from(ref);
    return Eigen::Map<const Eigen::VectorXd>(f.values.data(), kMeasurements).eval();
  };
  std::vector<double> gaps;
  for (int level : {8, 12, 16}) gaps.push_back((diff(level + 1) - diff(level)).norm());
  CAPTURE(gaps[0]);
  CAPTURE(gaps[1]);
  CAPTURE(gaps[2]);
  CHECK(gaps[0] > gaps[1]);
  CHECK(gaps[1] > gaps[2]);
}

TEST_CASE("mesh and Jacobian export as self-describing arrays") {
  const auto dir = std::filesystem::temp_directory_path() / "ptet_forward_export";
  std::filesystem::create_directories(dir);
  const auto mesh = generate_mesh(2);
  export_mesh(mesh, dir / "coarse");
  ArrayHeader h;
  const auto xy = read_array_as<double>(dir / "coarse_nodes.bin", &h);
  CHECK(h.shape == std::vector<std::int64_t>{81, 2});
  CHECK(h.ordering == "node,xy_mm");
  CHECK(xy[2 * 80] == 100.0);
  const auto tri = read_array_as<std::int32_t>(dir / "coarse_elements.bin", &h);
  CHECK(tri.size() == 3u * mesh.element_count());
  std::filesystem::remove_all(dir);
}

TEST_CASE("raising conductivity never raises the driving-pair transfer impedance") {
  // Thomson's principle bounds the self (driving-pair) impedance; adjacent
  // transfer impedances carry sensitivity of both signs and are not monotone.
  const auto mesh = generate_mesh(8);
  const ForwardSolver base(mesh, ConductivityField::uniform(mesh));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto grid = disk_grid(10 + 80 * u(rng), 10 + 80 * u(rng), 3 + 10 * u(rng), 1.0 + u(rng));
    const ForwardSolver s(mesh, pixel_to_element(grid, mesh));
    for (int d = 0; d < kElectrodes; ++d)
      CHECK(std::abs(s.drive_voltage(d)) <= std::abs(base.drive_voltage(d)));
  }
}

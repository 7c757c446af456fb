#include "ptet/forward/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "ptet/core/array_io.hpp"

namespace ptet::forward {

double Mesh::signed_area(int element) const {
  const auto& [i, j, k] = elements[element];
  const Point &p = nodes[i], &q = nodes[j], &r = nodes[k];
  return 0.5 * ((q.x - p.x) * (r.y - p.y) - (r.x - p.x) * (q.y - p.y));
}

Point Mesh::centroid(int element) const {
  const auto& [i, j, k] = elements[element];
  return {(nodes[i].x + nodes[j].x + nodes[k].x) / 3.0,
          (nodes[i].y + nodes[j].y + nodes[k].y) / 3.0};
}

double Mesh::electrode_length(int l) const {
  double len = 0.0;
  for (const auto& e : electrodes[l]) {
    const double h = std::hypot(nodes[e.b].x - nodes[e.a].x, nodes[e.b].y - nodes[e.a].y);
    len += h * (e.t1 - e.t0);
  }
  return len;
}

Mesh generate_mesh(int refinement_level, const ElectrodeLayout& layout) {
  if (refinement_level < 1) throw std::invalid_argument("refinement_level must be >= 1");
  if (layout.per_side < 1 || layout.coverage <= 0.0 || layout.coverage >= 1.0)
    throw std::invalid_argument("invalid electrode layout");
  if (layout.per_side * 4 != kElectrodes)
    throw std::invalid_argument("layout must place 16 electrodes");

  Mesh mesh;
  mesh.refinement_level = refinement_level;
  const int n = 4 * refinement_level;  // cells per side
  const double h = kDomainSize / n;
  auto id = [n](int ix, int iy) { return iy * (n + 1) + ix; };

  mesh.nodes.reserve(static_cast<std::size_t>(n + 1) * (n + 1));
  for (int iy = 0; iy <= n; ++iy)
    for (int ix = 0; ix <= n; ++ix) mesh.nodes.push_back({ix * h, iy * h});

  mesh.elements.reserve(static_cast<std::size_t>(2) * n * n);
  const int half = n / 2;
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      const int n00 = id(ix, iy), n10 = id(ix + 1, iy), n01 = id(ix, iy + 1), n11 = id(ix + 1, iy + 1);
      const bool lower_x = ix < half, lower_y = iy < half;
      if (lower_x == lower_y) {  // "/" diagonal
        mesh.elements.push_back({n00, n10, n11});
        mesh.elements.push_back({n00, n11, n01});
      } else {  // "\" diagonal
        mesh.elements.push_back({n00, n10, n01});
        mesh.elements.push_back({n10, n11, n01});
      }
    }
  }

  // Boundary walk, counter-clockwise from (0,0): arc length s in [0, 400).
  std::vector<int> ring;
  ring.reserve(4 * n);
  for (int i = 0; i < n; ++i) ring.push_back(id(i, 0));
  for (int i = 0; i < n; ++i) ring.push_back(id(n, i));
  for (int i = 0; i < n; ++i) ring.push_back(id(n - i, n));
  for (int i = 0; i < n; ++i) ring.push_back(id(0, n - i));

  const double allotted = kDomainSize / layout.per_side;
  const double width = layout.coverage * allotted;
  for (int l = 0; l < kElectrodes; ++l) {
    const int side = l / layout.per_side;
    const int slot = l % layout.per_side;
    const double centre = side * kDomainSize + (slot + 0.5) * allotted;
    const double s0 = centre - 0.5 * width, s1 = centre + 0.5 * width;
    for (int k = 0; k < 4 * n; ++k) {
      const double e0 = k * h, e1 = (k + 1) * h;
      const double lo = std::max(s0, e0), hi = std::min(s1, e1);
      if (hi - lo <= 1e-12 * h) continue;
      mesh.electrodes[l].push_back(
          {ring[k], ring[(k + 1) % (4 * n)], (lo - e0) / h, (hi - e0) / h});
    }
  }
  return mesh;
}

void export_mesh(const Mesh& mesh, const std::filesystem::path& prefix) {
  std::vector<double> xy;
  xy.reserve(mesh.nodes.size() * 2);
  for (const auto& p : mesh.nodes) {
    xy.push_back(p.x);
    xy.push_back(p.y);
  }
  std::vector<std::int32_t> tri;
  tri.reserve(mesh.elements.size() * 3);
  for (const auto& e : mesh.elements) tri.insert(tri.end(), e.begin(), e.end());
  std::vector<double> el;
  for (int l = 0; l < kElectrodes; ++l)
    for (const auto& e : mesh.electrodes[l])
      el.insert(el.end(), {double(l), double(e.a), double(e.b), e.t0, e.t1});

  nlohmann::json extra{{"refinement_level", mesh.refinement_level}};
  auto path_for = [&](const char* suffix) {
    return prefix.parent_path() / (prefix.filename().string() + suffix);
  };
  write_array(path_for("_nodes.bin"),
              ArrayHeader{{mesh.node_count(), 2}, "", "node,xy_mm", extra}, xy);
  write_array(path_for("_elements.bin"),
              ArrayHeader{{mesh.element_count(), 3}, "", "element,node_ccw", extra}, tri);
  write_array(path_for("_electrodes.bin"),
              ArrayHeader{{static_cast<std::int64_t>(el.size() / 5), 5}, "",
                          "contact,(electrode,node_a,node_b,t0,t1)", extra},
              el);
}

}  // namespace ptet::forward

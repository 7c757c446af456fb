#pragma once

#include <array>
#include <filesystem>
#include <vector>

namespace ptet::forward {

inline constexpr int kElectrodes = 16;
inline constexpr double kDomainSize = 100.0;  // mm, square side

struct Point {
  double x = 0.0;
  double y = 0.0;
};

// Part of a boundary edge (a -> b) in contact with an electrode. The contact
// covers the parametric interval [t0, t1] of the edge, t measured from a.
struct ElectrodeEdge {
  int a = 0;
  int b = 0;
  double t0 = 0.0;
  double t1 = 1.0;
};

// Electrodes sit `per_side` to a side, each centred on its share of the side
// and covering `coverage` of it, so corners never carry an electrode.
struct ElectrodeLayout {
  int per_side = 4;
  double coverage = 0.6;
};

// Structured triangulation of the square [0, 100]^2 mm.
//
// Electrode numbering runs counter-clockwise from the (0, 0) corner: 0-3 on
// the bottom side (left to right), 4-7 on the right side (bottom to top),
// 8-11 on the top side (right to left), 12-15 on the left side (top to
// bottom). Boundary not covered by an electrode is insulating.
struct Mesh {
  std::vector<Point> nodes;
  std::vector<std::array<int, 3>> elements;
  std::array<std::vector<ElectrodeEdge>, kElectrodes> electrodes;
  int refinement_level = 0;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int element_count() const { return static_cast<int>(elements.size()); }
  double signed_area(int element) const;
  Point centroid(int element) const;
  // Contact length of electrode `l` in mm.
  double electrode_length(int l) const;
};

// 2 * (4 * level)^2 triangles, (4 * level + 1)^2 nodes. Cell diagonals point
// towards the domain centre so the mesh is invariant under the square's
// symmetry group.
Mesh generate_mesh(int refinement_level, const ElectrodeLayout& layout = {});

// Writes <prefix>_nodes.bin, <prefix>_elements.bin, <prefix>_electrodes.bin.
void export_mesh(const Mesh& mesh, const std::filesystem::path& prefix);

}  // namespace ptet::forward

#pragma once

// Independent mesh constructions for tests: hand-wound box and UV sphere,
// built without the library's procedural shape generator.

#include <cmath>

#include "mars/geometry/mesh.hpp"

namespace testutil {

inline mars::TriMesh make_box(const mars::Vec3& lo, const mars::Vec3& hi) {
  mars::TriMesh m;
  m.vertices = {
      {lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), lo.z()},
      {lo.x(), hi.y(), lo.z()}, {lo.x(), lo.y(), hi.z()}, {hi.x(), lo.y(), hi.z()},
      {hi.x(), hi.y(), hi.z()}, {lo.x(), hi.y(), hi.z()},
  };
  const int faces[12][3] = {
      {0, 2, 1}, {0, 3, 2},  // bottom (-z)
      {4, 5, 6}, {4, 6, 7},  // top (+z)
      {0, 1, 5}, {0, 5, 4},  // front (-y)
      {1, 2, 6}, {1, 6, 5},  // right (+x)
      {2, 3, 7}, {2, 7, 6},  // back (+y)
      {3, 0, 4}, {3, 4, 7},  // left (-x)
  };
  for (const auto& f : faces) m.triangles.emplace_back(f[0], f[1], f[2]);
  return m;
}

inline mars::TriMesh make_uv_sphere(double radius, int segments = 48, int rings = 24,
                                    const mars::Vec3& center = mars::Vec3::Zero()) {
  mars::TriMesh m;
  m.vertices.push_back(center + mars::Vec3(0, 0, radius));  // north pole
  for (int i = 1; i < rings; ++i) {
    const double theta = M_PI * i / rings;
    for (int j = 0; j < segments; ++j) {
      const double phi = 2.0 * M_PI * j / segments;
      m.vertices.push_back(center + radius * mars::Vec3(std::sin(theta) * std::cos(phi),
                                                        std::sin(theta) * std::sin(phi),
                                                        std::cos(theta)));
    }
  }
  m.vertices.push_back(center + mars::Vec3(0, 0, -radius));  // south pole
  const int south = static_cast<int>(m.vertices.size()) - 1;
  const auto ring_vertex = [&](int ring, int seg) { return 1 + (ring - 1) * segments + (seg % segments); };
  for (int j = 0; j < segments; ++j) {
    m.triangles.emplace_back(0, ring_vertex(1, j), ring_vertex(1, j + 1));
  }
  for (int i = 1; i + 1 < rings; ++i) {
    for (int j = 0; j < segments; ++j) {
      const int a = ring_vertex(i, j), b = ring_vertex(i, j + 1);
      const int c = ring_vertex(i + 1, j), d = ring_vertex(i + 1, j + 1);
      m.triangles.emplace_back(a, c, d);
      m.triangles.emplace_back(a, d, b);
    }
  }
  for (int j = 0; j < segments; ++j) {
    m.triangles.emplace_back(south, ring_vertex(rings - 1, j + 1), ring_vertex(rings - 1, j));
  }
  return m;
}

}  // namespace testutil

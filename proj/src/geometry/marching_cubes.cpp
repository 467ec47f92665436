#include "mars/geometry/marching_cubes.hpp"

#include <cmath>
#include <unordered_map>

#include "mars/error.hpp"

namespace mars {

namespace {

#include "marching_cubes_tables.inc"

// Cube corner offsets in the conventional order (bottom face CCW, then top).
const Index kCorner[8][3] = {
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
    {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
};

// Each cube edge connects two of the corners above.
const int kEdgeCorner[12][2] = {
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
    {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
};

// Interpolation parameter kept strictly inside (0,1) so edge vertices never
// collapse onto lattice nodes shared by several edges.
constexpr double kTClamp = 1e-6;

}  // namespace

TriMesh marching_cubes(const std::vector<double>& field, Index resolution, double iso) {
  if (resolution < 2) throw ContractError("marching_cubes: resolution must be at least 2");
  if (static_cast<Index>(field.size()) != resolution * resolution * resolution) {
    throw ContractError("marching_cubes: field size does not match resolution^3");
  }
  for (double v : field) {
    if (!std::isfinite(v)) throw NumericError("marching_cubes: non-finite field value");
  }

  const Index r = resolution;
  const auto node_index = [r](Index x, Index y, Index z) { return (x * r + y) * r + z; };
  const auto node_pos = [r](Index i) { return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(r - 1); };

  TriMesh mesh;
  std::unordered_map<std::uint64_t, int> edge_vertex;  // welded vertex per lattice edge
  const auto vertex_on_edge = [&](Index ax, Index ay, Index az, Index bx, Index by, Index bz) {
    std::uint64_t ka = static_cast<std::uint64_t>(node_index(ax, ay, az));
    std::uint64_t kb = static_cast<std::uint64_t>(node_index(bx, by, bz));
    if (ka > kb) {
      std::swap(ka, kb);
      std::swap(ax, bx);
      std::swap(ay, by);
      std::swap(az, bz);
    }
    const std::uint64_t key = (ka << 32) | kb;
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = field[static_cast<std::size_t>(node_index(ax, ay, az))];
    const double vb = field[static_cast<std::size_t>(node_index(bx, by, bz))];
    double t = std::abs(vb - va) < 1e-300 ? 0.5 : (iso - va) / (vb - va);
    t = std::min(1.0 - kTClamp, std::max(kTClamp, t));
    const Vec3 pa(node_pos(ax), node_pos(ay), node_pos(az));
    const Vec3 pb(node_pos(bx), node_pos(by), node_pos(bz));
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pa + t * (pb - pa));
    edge_vertex.emplace(key, id);
    return id;
  };

  for (Index x = 0; x + 1 < r; ++x) {
    for (Index y = 0; y + 1 < r; ++y) {
      for (Index z = 0; z + 1 < r; ++z) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const double v = field[static_cast<std::size_t>(
              node_index(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]))];
          if (v < iso) cube |= 1 << c;
        }
        if (kEdgeTable[cube] == 0) continue;
        int verts[12];
        for (int e = 0; e < 12; ++e) {
          if (!(kEdgeTable[cube] & (1 << e))) continue;
          const int ca = kEdgeCorner[e][0], cb = kEdgeCorner[e][1];
          verts[e] = vertex_on_edge(x + kCorner[ca][0], y + kCorner[ca][1], z + kCorner[ca][2],
                                    x + kCorner[cb][0], y + kCorner[cb][1], z + kCorner[cb][2]);
        }
        for (int i = 0; kTriTable[cube][i] != -1; i += 3) {
          mesh.triangles.emplace_back(verts[kTriTable[cube][i]], verts[kTriTable[cube][i + 1]],
                                      verts[kTriTable[cube][i + 2]]);
        }
      }
    }
  }
  return mesh;
}

}  // namespace mars

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mars/geometry/mesh.hpp"
#include "mars/geometry/sampling.hpp"

namespace mars {

/// Query points with ground-truth occupancy targets.
struct QueryBatch {
  Points3 points;                     // Q x 3, within [-1.05, 1.05]^3
  std::vector<std::uint8_t> occupied; // Q booleans

  Index size() const { return points.rows(); }
};

/// Ray-parity inside/outside oracle over a watertight mesh, accelerated by a
/// bounding-volume hierarchy. Rays are cast along a fixed generic direction;
/// hits that graze an edge or vertex (barycentric coordinate within 1e-9 of
/// the boundary) trigger a deterministic retry along a perturbed direction.
class MeshOccupancy {
 public:
  explicit MeshOccupancy(const TriMesh& mesh);  // requires watertight input

  bool inside(const Vec3& point) const;

  const TriMesh& mesh() const { return mesh_; }

 private:
  struct Node {
    Vec3 lo, hi;
    Index left = -1, right = -1;   // internal children
    Index first = 0, count = 0;    // leaf triangle range
  };

  Index build(Index first, Index count);
  // crossings for one direction; returns false if a degenerate hit occurred
  bool cast(const Vec3& origin, const Vec3& dir, int& crossings) const;

  TriMesh mesh_;
  std::vector<Index> tri_order_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
  Index root_ = -1;
};

/// Convenience wrapper; builds the oracle per call. Use MeshOccupancy
/// directly for batched queries.
bool point_in_mesh(const TriMesh& mesh, const Vec3& point);

/// q_uniform points uniform in [-1,1]^3 plus q_near surface samples jittered
/// along their normals by N(0, sigma^2); targets from the parity oracle.
QueryBatch build_query_batch(const TriMesh& mesh, Index q_uniform, Index q_near, double sigma,
                             std::uint64_t seed);
QueryBatch build_query_batch(const MeshOccupancy& oracle, Index q_uniform, Index q_near, double sigma,
                             std::uint64_t seed);

}  // namespace mars

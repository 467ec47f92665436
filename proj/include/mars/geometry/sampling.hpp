#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mars/geometry/mesh.hpp"

namespace mars {

using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Oriented surface samples: positions plus unit normals.
struct PointCloud {
  Points3 points;
  Points3 normals;

  Index size() const { return points.rows(); }
  PointCloud take(const std::vector<Index>& order, Index count) const;
};

/// Area-weighted surface sampling with barycentric placement; the normal of
/// each sample is the face normal of its triangle. Deterministic per seed.
PointCloud sample_surface(const TriMesh& mesh, Index n, std::uint64_t seed);

/// Greedy farthest point sampling. Starts at seed_index, repeatedly adds the
/// point maximizing the distance to the nearest already-selected point, ties
/// broken by lowest index. Returns the selection order.
std::vector<Index> fps(const Points3& points, Index k, Index seed_index);

inline std::vector<Index> fps(const PointCloud& cloud, Index k, Index seed_index) {
  return fps(cloud.points, k, seed_index);
}

}  // namespace mars

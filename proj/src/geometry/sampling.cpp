#include "mars/geometry/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "mars/error.hpp"
#include "mars/rng.hpp"

namespace mars {

PointCloud PointCloud::take(const std::vector<Index>& order, Index count) const {
  if (count > static_cast<Index>(order.size())) {
    throw ContractError("PointCloud::take: requested more points than the order provides");
  }
  PointCloud out;
  out.points.resize(count, 3);
  out.normals.resize(count, 3);
  for (Index i = 0; i < count; ++i) {
    out.points.row(i) = points.row(order[static_cast<std::size_t>(i)]);
    out.normals.row(i) = normals.row(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

PointCloud sample_surface(const TriMesh& mesh, Index n, std::uint64_t seed) {
  if (n <= 0) throw ContractError("sample_surface: n must be positive");
  const Index num_tris = mesh.triangle_count();
  std::vector<double> cumulative(static_cast<std::size_t>(num_tris));
  double total = 0.0;
  for (Index t = 0; t < num_tris; ++t) {
    total += mesh.triangle_area(t);
    cumulative[static_cast<std::size_t>(t)] = total;
  }
  if (total <= 0.0) throw GeometryError("sample_surface: mesh has zero surface area");

  Rng rng(seed);
  PointCloud cloud;
  cloud.points.resize(n, 3);
  cloud.normals.resize(n, 3);
  for (Index i = 0; i < n; ++i) {
    const double pick = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const Index t = std::min<Index>(static_cast<Index>(it - cumulative.begin()), num_tris - 1);
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const Vec3 p = (1.0 - r1) * mesh.vertices[tri[0]] + r1 * (1.0 - r2) * mesh.vertices[tri[1]] +
                   r1 * r2 * mesh.vertices[tri[2]];
    cloud.points.row(i) = p;
    cloud.normals.row(i) = mesh.triangle_normal(t);
  }
  return cloud;
}

std::vector<Index> fps(const Points3& points, Index k, Index seed_index) {
  const Index n = points.rows();
  if (n == 0) throw ContractError("fps: empty point set");
  if (k < 1 || k > n) {
    throw ContractError("fps: k = " + std::to_string(k) + " out of range [1, " + std::to_string(n) + "]");
  }
  if (seed_index < 0 || seed_index >= n) throw ContractError("fps: seed index out of range");

  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(k));
  order.push_back(seed_index);

  std::vector<char> selected(static_cast<std::size_t>(n), 0);
  selected[static_cast<std::size_t>(seed_index)] = 1;
  Eigen::VectorXd nearest = (points.rowwise() - points.row(seed_index)).rowwise().squaredNorm();
  for (Index step = 1; step < k; ++step) {
    Index best = -1;
    double best_d = -1.0;
    for (Index j = 0; j < n; ++j) {
      if (!selected[static_cast<std::size_t>(j)] && nearest[j] > best_d) {
        best_d = nearest[j];  // strict: ties keep the lowest index
        best = j;
      }
    }
    order.push_back(best);
    selected[static_cast<std::size_t>(best)] = 1;
    nearest = nearest.cwiseMin((points.rowwise() - points.row(best)).rowwise().squaredNorm());
  }
  return order;
}

}  // namespace mars

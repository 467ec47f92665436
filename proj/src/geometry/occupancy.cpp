#include "mars/geometry/occupancy.hpp"

#include <algorithm>
#include <cmath>

#include "mars/error.hpp"
#include "mars/rng.hpp"

namespace mars {

namespace {

constexpr double kBaryEps = 1e-9;
constexpr double kDetEps = 1e-12;
constexpr Index kLeafSize = 4;

// Fixed generic unit directions; axis-aligned geometry never parallels them.
const Vec3& ray_direction(int attempt) {
  static const Vec3 dirs[4] = {
      Vec3(0.5773502691896258, 0.30102999566398114, 0.7589340439084025).normalized(),
      Vec3(-0.41344373629840529, 0.86602540378443871, 0.28171817154095087).normalized(),
      Vec3(0.71828182845904523, -0.54030230586813977, 0.43879128096477975).normalized(),
      Vec3(0.22360679774997896, 0.64872127070012819, -0.73105857863000490).normalized(),
  };
  return dirs[attempt];
}

bool ray_hits_box(const Vec3& origin, const Vec3& inv_dir, const Vec3& lo, const Vec3& hi) {
  double tmin = -1e-9, tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double t1 = (lo[a] - origin[a]) * inv_dir[a];
    const double t2 = (hi[a] - origin[a]) * inv_dir[a];
    tmin = std::max(tmin, std::min(t1, t2));
    tmax = std::min(tmax, std::max(t1, t2));
  }
  return tmax >= tmin;
}

}  // namespace

MeshOccupancy::MeshOccupancy(const TriMesh& mesh) : mesh_(mesh) {
  require_watertight(mesh_, "MeshOccupancy");
  const Index n = mesh_.triangle_count();
  tri_order_.resize(static_cast<std::size_t>(n));
  centroids_.resize(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t) {
    tri_order_[static_cast<std::size_t>(t)] = t;
    const auto& tri = mesh_.triangles[static_cast<std::size_t>(t)];
    centroids_[static_cast<std::size_t>(t)] =
        (mesh_.vertices[tri[0]] + mesh_.vertices[tri[1]] + mesh_.vertices[tri[2]]) / 3.0;
  }
  nodes_.reserve(static_cast<std::size_t>(2 * n));
  root_ = build(0, n);
}

Index MeshOccupancy::build(Index first, Index count) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (Index i = first; i < first + count; ++i) {
    const auto& tri = mesh_.triangles[static_cast<std::size_t>(tri_order_[static_cast<std::size_t>(i)])];
    for (int c = 0; c < 3; ++c) {
      node.lo = node.lo.cwiseMin(mesh_.vertices[tri[c]]);
      node.hi = node.hi.cwiseMax(mesh_.vertices[tri[c]]);
    }
  }
  const Index index = static_cast<Index>(nodes_.size());
  nodes_.push_back(node);
  if (count <= kLeafSize) {
    nodes_[static_cast<std::size_t>(index)].first = first;
    nodes_[static_cast<std::size_t>(index)].count = count;
    return index;
  }
  int axis = 0;
  (node.hi - node.lo).maxCoeff(&axis);
  const Index mid = first + count / 2;
  std::nth_element(tri_order_.begin() + first, tri_order_.begin() + mid, tri_order_.begin() + first + count,
                   [&](Index a, Index b) {
                     const double ca = centroids_[static_cast<std::size_t>(a)][axis];
                     const double cb = centroids_[static_cast<std::size_t>(b)][axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  const Index left = build(first, mid - first);
  const Index right = build(mid, first + count - mid);
  nodes_[static_cast<std::size_t>(index)].left = left;
  nodes_[static_cast<std::size_t>(index)].right = right;
  return index;
}

bool MeshOccupancy::cast(const Vec3& origin, const Vec3& dir, int& crossings) const {
  const Vec3 inv_dir = dir.cwiseInverse();
  std::vector<Index> stack;
  stack.push_back(root_);
  while (!stack.empty()) {
    const Node& node = nodes_[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (!ray_hits_box(origin, inv_dir, node.lo, node.hi)) continue;
    if (node.count > 0) {
      for (Index i = node.first; i < node.first + node.count; ++i) {
        const auto& tri =
            mesh_.triangles[static_cast<std::size_t>(tri_order_[static_cast<std::size_t>(i)])];
        const Vec3& a = mesh_.vertices[tri[0]];
        const Vec3 e1 = mesh_.vertices[tri[1]] - a;
        const Vec3 e2 = mesh_.vertices[tri[2]] - a;
        const Vec3 pvec = dir.cross(e2);
        const double det = e1.dot(pvec);
        if (std::abs(det) < kDetEps) {
          // Ray parallel to the triangle plane; ambiguous only if the ray
          // actually passes through the triangle's bounds.
          Vec3 tlo = a.cwiseMin(a + e1).cwiseMin(a + e2);
          Vec3 thi = a.cwiseMax(a + e1).cwiseMax(a + e2);
          if (ray_hits_box(origin, inv_dir, tlo - Vec3::Constant(kBaryEps),
                           thi + Vec3::Constant(kBaryEps))) {
            return false;
          }
          continue;
        }
        const double inv_det = 1.0 / det;
        const Vec3 tvec = origin - a;
        const double u = tvec.dot(pvec) * inv_det;
        const Vec3 qvec = tvec.cross(e1);
        const double v = dir.dot(qvec) * inv_det;
        const double t = e2.dot(qvec) * inv_det;
        if (t <= kBaryEps) continue;  // behind or exactly on the surface
        if (u <= -kBaryEps || v <= -kBaryEps || u + v >= 1.0 + kBaryEps) continue;  // clear miss
        if (u < kBaryEps || v < kBaryEps || u + v > 1.0 - kBaryEps) return false;   // grazes edge/vertex
        ++crossings;
      }
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  return true;
}

bool MeshOccupancy::inside(const Vec3& point) const {
  for (int attempt = 0; attempt < 4; ++attempt) {
    int crossings = 0;
    if (cast(point, ray_direction(attempt), crossings)) return (crossings % 2) == 1;
  }
  throw GeometryError("MeshOccupancy::inside: parity undecided after 4 ray directions; "
                      "mesh may be degenerate at the query point");
}

bool point_in_mesh(const TriMesh& mesh, const Vec3& point) {
  return MeshOccupancy(mesh).inside(point);
}

QueryBatch build_query_batch(const MeshOccupancy& oracle, Index q_uniform, Index q_near, double sigma,
                             std::uint64_t seed) {
  if (q_uniform < 0 || q_near < 0 || q_uniform + q_near <= 0) {
    throw ContractError("build_query_batch: need a positive number of query points");
  }
  Rng rng(seed);
  QueryBatch batch;
  batch.points.resize(q_uniform + q_near, 3);
  for (Index i = 0; i < q_uniform; ++i) {
    for (int c = 0; c < 3; ++c) batch.points(i, c) = rng.uniform(-1.0, 1.0);
  }
  if (q_near > 0) {
    const PointCloud surface = sample_surface(oracle.mesh(), q_near, rng.bits());
    for (Index i = 0; i < q_near; ++i) {
      const double offset = rng.normal(0.0, sigma);
      Vec3 p = surface.points.row(i).transpose() + offset * surface.normals.row(i).transpose();
      p = p.cwiseMax(-1.05).cwiseMin(1.05);
      batch.points.row(q_uniform + i) = p;
    }
  }
  batch.occupied.resize(static_cast<std::size_t>(batch.points.rows()));
  for (Index i = 0; i < batch.points.rows(); ++i) {
    batch.occupied[static_cast<std::size_t>(i)] = oracle.inside(batch.points.row(i).transpose()) ? 1 : 0;
  }
  return batch;
}

QueryBatch build_query_batch(const TriMesh& mesh, Index q_uniform, Index q_near, double sigma,
                             std::uint64_t seed) {
  return build_query_batch(MeshOccupancy(mesh), q_uniform, q_near, sigma, seed);
}

}  // namespace mars

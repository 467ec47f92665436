#include "mars/geometry/metrics.hpp"

#include <cmath>
#include <unordered_map>

#include "mars/error.hpp"

namespace mars {

namespace {

// Uniform hash grid with cell size tau; a point within tau of a query lies
// in one of the 27 cells around the query's cell.
class NeighborGrid {
 public:
  NeighborGrid(const Points3& points, double tau) : points_(points), inv_cell_(1.0 / tau) {
    for (Index i = 0; i < points.rows(); ++i) {
      cells_[key(points.row(i))].push_back(i);
    }
  }

  bool has_within(const Eigen::RowVector3d& q, double tau2) const {
    const Eigen::Array3i base = cell_of(q);
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find(pack(base.x() + dx, base.y() + dy, base.z() + dz));
          if (it == cells_.end()) continue;
          for (Index i : it->second) {
            if ((points_.row(i) - q).squaredNorm() <= tau2) return true;
          }
        }
      }
    }
    return false;
  }

 private:
  Eigen::Array3i cell_of(const Eigen::RowVector3d& p) const {
    return Eigen::Array3i(static_cast<int>(std::floor(p.x() * inv_cell_)),
                          static_cast<int>(std::floor(p.y() * inv_cell_)),
                          static_cast<int>(std::floor(p.z() * inv_cell_)));
  }
  static std::int64_t pack(int x, int y, int z) {
    const auto u = [](int v) { return static_cast<std::int64_t>(v) + (1 << 20); };
    return (u(x) << 42) | (u(y) << 21) | u(z);
  }
  std::int64_t key(const Eigen::RowVector3d& p) const {
    const auto c = cell_of(p);
    return pack(c.x(), c.y(), c.z());
  }

  const Points3& points_;
  double inv_cell_;
  std::unordered_map<std::int64_t, std::vector<Index>> cells_;
};

double coverage(const Points3& from, const NeighborGrid& target_grid, double tau2) {
  Index hits = 0;
  for (Index i = 0; i < from.rows(); ++i) {
    hits += target_grid.has_within(from.row(i), tau2) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(from.rows());
}

}  // namespace

double f_score(const Points3& gen, const Points3& ref, double tau) {
  if (gen.rows() == 0 || ref.rows() == 0) throw ContractError("f_score: empty point cloud");
  if (!(tau > 0.0)) throw ContractError("f_score: tau must be positive");
  const double tau2 = tau * tau;
  const NeighborGrid gen_grid(gen, tau);
  const NeighborGrid ref_grid(ref, tau);
  const double precision = coverage(gen, ref_grid, tau2);
  const double recall = coverage(ref, gen_grid, tau2);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double f_score(const PointCloud& gen, const PointCloud& ref, double tau) {
  return f_score(gen.points, ref.points, tau);
}

}  // namespace mars

#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace mars {

using Index = Eigen::Index;
using Vec3 = Eigen::Vector3d;

/// Triangle mesh in object space. Meshes used as occupancy ground truth must
/// be watertight: every directed edge appears exactly once and its reverse
/// exactly once (closed, consistently wound).
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Eigen::Vector3i> triangles;

  Index vertex_count() const { return static_cast<Index>(vertices.size()); }
  Index triangle_count() const { return static_cast<Index>(triangles.size()); }

  Vec3 triangle_normal(Index t) const;  // unit, zero vector for degenerate triangles
  double triangle_area(Index t) const;
  double surface_area() const;

  void bounding_box(Vec3& lo, Vec3& hi) const;
};

TriMesh load_obj(const std::string& path);
void save_obj(const TriMesh& mesh, const std::string& path);

/// Parse OBJ text (v/f records; polygonal faces fan-triangulated).
TriMesh parse_obj(const std::string& text, const std::string& origin);
std::string format_obj(const TriMesh& mesh);

/// True iff closed and consistently wound, with no degenerate index triples.
bool is_watertight(const TriMesh& mesh);
void require_watertight(const TriMesh& mesh, const std::string& context);

/// Center at the bounding-box center and scale uniformly so the longest box
/// edge spans 1.9, leaving margin inside [-1,1]^3. Idempotent.
void normalize_mesh(TriMesh& mesh);

}  // namespace mars

#include "mars/pipeline/shapes.hpp"

#include <array>
#include <cmath>
#include <map>

#include "mars/error.hpp"
#include "mars/rng.hpp"

namespace mars {

const char* family_name(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::kBox: return "box";
    case ShapeFamily::kSuperellipsoid: return "superellipsoid";
    case ShapeFamily::kSphere: return "sphere";
    case ShapeFamily::kExtrudedPolygon: return "extruded-polygon";
  }
  throw ContractError("family_name: unknown family");
}

ShapeFamily family_from_name(const std::string& name) {
  if (name == "box") return ShapeFamily::kBox;
  if (name == "superellipsoid") return ShapeFamily::kSuperellipsoid;
  if (name == "sphere") return ShapeFamily::kSphere;
  if (name == "extruded-polygon") return ShapeFamily::kExtrudedPolygon;
  throw ParseError("unknown shape family '" + name + "'");
}

const char* detail_name(DetailKind kind) {
  switch (kind) {
    case DetailKind::kSinusoid: return "sinusoid";
    case DetailKind::kGridBumps: return "grid-bumps";
    case DetailKind::kRidges: return "ridges";
  }
  throw ContractError("detail_name: unknown kind");
}

DetailKind detail_from_name(const std::string& name) {
  if (name == "sinusoid") return DetailKind::kSinusoid;
  if (name == "grid-bumps") return DetailKind::kGridBumps;
  if (name == "ridges") return DetailKind::kRidges;
  throw ParseError("unknown detail kind '" + name + "'");
}

namespace {

double lerp(double a, double b, double t) { return a * (1.0 - t) + b * t; }

// Incremental builder that welds vertices by exact position. Grid seams use
// identical lerp endpoints, so welding by value is reliable.
class MeshBuilder {
 public:
  int vertex(const Vec3& p) {
    const std::array<double, 3> key{p.x(), p.y(), p.z()};
    const auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(mesh_.vertices.size());
    mesh_.vertices.push_back(p);
    index_.emplace(key, id);
    return id;
  }

  void triangle(int a, int b, int c) {
    if (a == b || b == c || a == c) return;  // collapsed at a pole or center
    mesh_.triangles.emplace_back(a, b, c);
  }

  void quad(int a, int b, int c, int d) {
    triangle(a, b, c);
    triangle(a, c, d);
  }

  TriMesh take() { return std::move(mesh_); }

 private:
  TriMesh mesh_;
  std::map<std::array<double, 3>, int> index_;
};

TriMesh build_box(Rng& rng) {
  const Vec3 half(rng.uniform(0.55, 1.0), rng.uniform(0.55, 1.0), rng.uniform(0.55, 1.0));
  const int n = 20;
  MeshBuilder b;
  // each face: grid over axes (u, v) at fixed w = +-half[axis]
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = -1; side <= 1; side += 2) {
      const int ua = (axis + 1) % 3, va = (axis + 2) % 3;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          auto corner = [&](int di, int dj) {
            Vec3 p;
            p[axis] = side * half[axis];
            p[ua] = lerp(-half[ua], half[ua], static_cast<double>(i + di) / n);
            p[va] = lerp(-half[va], half[va], static_cast<double>(j + dj) / n);
            return b.vertex(p);
          };
          const int v00 = corner(0, 0), v10 = corner(1, 0), v11 = corner(1, 1), v01 = corner(0, 1);
          if (side > 0) {
            b.quad(v00, v10, v11, v01);
          } else {
            b.quad(v00, v01, v11, v10);
          }
        }
      }
    }
  }
  return b.take();
}

// Sphere-topology surface with a per-direction radius; covers the sphere and
// superellipsoid families.
template <typename RadiusFn>
TriMesh build_radial(int segments, int rings, RadiusFn&& radius) {
  MeshBuilder b;
  std::vector<std::vector<int>> ring_ids(static_cast<std::size_t>(rings + 1));
  for (int i = 0; i <= rings; ++i) {
    const double theta = M_PI * i / rings;
    for (int j = 0; j < segments; ++j) {
      const double phi = 2.0 * M_PI * j / segments;
      const Vec3 dir(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
      // exact poles so every segment shares one welded vertex there
      const Vec3 d = i == 0 ? Vec3(0, 0, 1) : (i == rings ? Vec3(0, 0, -1) : dir);
      ring_ids[static_cast<std::size_t>(i)].push_back(b.vertex(radius(d) * d));
    }
  }
  for (int i = 0; i < rings; ++i) {
    const auto& top = ring_ids[static_cast<std::size_t>(i)];
    const auto& bot = ring_ids[static_cast<std::size_t>(i + 1)];
    for (int j = 0; j < segments; ++j) {
      const int k = (j + 1) % segments;
      b.quad(top[static_cast<std::size_t>(j)], bot[static_cast<std::size_t>(j)],
             bot[static_cast<std::size_t>(k)], top[static_cast<std::size_t>(k)]);
    }
  }
  return b.take();
}

TriMesh build_sphere(Rng& rng) {
  const Vec3 radii(rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0));
  return build_radial(48, 24, [&](const Vec3& d) {
    const Vec3 scaled(d.x() / radii.x(), d.y() / radii.y(), d.z() / radii.z());
    return 1.0 / scaled.norm();  // ellipsoid hit distance along d
  });
}

TriMesh build_superellipsoid(Rng& rng) {
  const double p = rng.uniform(3.0, 8.0);
  const Vec3 radii(rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0), rng.uniform(0.6, 1.0));
  return build_radial(48, 24, [&](const Vec3& d) {
    double total = 0.0;
    for (int a = 0; a < 3; ++a) total += std::pow(std::abs(d[a] / radii[a]), p);
    return std::pow(total, -1.0 / p);
  });
}

TriMesh build_extruded_polygon(Rng& rng) {
  const int sides = 3 + static_cast<int>(rng.uniform_int(6));  // 3..8
  const double radius = rng.uniform(0.6, 0.95);
  const double squash = rng.uniform(0.7, 1.0);
  const double height = rng.uniform(0.7, 1.3);
  const int edge_div = std::max(2, 24 / sides);  // boundary vertices per polygon edge
  const int levels = 16;                         // rings along the extrusion
  const int cap_rings = 6;

  const int boundary = sides * edge_div;
  std::vector<Vec3> outline(static_cast<std::size_t>(boundary));
  for (int s = 0; s < sides; ++s) {
    const double a0 = 2.0 * M_PI * s / sides;
    const double a1 = 2.0 * M_PI * (s + 1) / sides;
    const Vec3 c0(radius * std::cos(a0), squash * radius * std::sin(a0), 0.0);
    const Vec3 c1(radius * std::cos(a1), squash * radius * std::sin(a1), 0.0);
    for (int e = 0; e < edge_div; ++e) {
      const double t = static_cast<double>(e) / edge_div;
      outline[static_cast<std::size_t>(s * edge_div + e)] =
          Vec3(lerp(c0.x(), c1.x(), t), lerp(c0.y(), c1.y(), t), 0.0);
    }
  }

  MeshBuilder b;
  const auto side_vertex = [&](int level, int j) {
    const double z = lerp(-height / 2, height / 2, static_cast<double>(level) / levels);
    const Vec3& o = outline[static_cast<std::size_t>(j % boundary)];
    return b.vertex(Vec3(o.x(), o.y(), z));
  };
  for (int level = 0; level < levels; ++level) {
    for (int j = 0; j < boundary; ++j) {
      b.quad(side_vertex(level, j), side_vertex(level, j + 1), side_vertex(level + 1, j + 1),
             side_vertex(level + 1, j));
    }
  }
  // caps: concentric shrinking outlines down to the center point
  for (int side = -1; side <= 1; side += 2) {
    const double z = side * height / 2;
    const auto cap_vertex = [&](int ring, int j) {
      const double shrink = 1.0 - static_cast<double>(ring) / cap_rings;
      const Vec3& o = outline[static_cast<std::size_t>(j % boundary)];
      return b.vertex(Vec3(o.x() * shrink, o.y() * shrink, z));
    };
    const int top_level = side > 0 ? levels : 0;
    for (int ring = 0; ring < cap_rings; ++ring) {
      for (int j = 0; j < boundary; ++j) {
        const int a = ring == 0 ? side_vertex(top_level, j) : cap_vertex(ring, j);
        const int bb = ring == 0 ? side_vertex(top_level, j + 1) : cap_vertex(ring, j + 1);
        const int c = cap_vertex(ring + 1, j + 1), d = cap_vertex(ring + 1, j);
        if (side > 0) {
          b.quad(a, bb, c, d);
        } else {
          b.quad(a, d, c, bb);
        }
      }
    }
  }
  return b.take();
}

double detail_pattern(const DetailRecipe& recipe, const Vec3& p, const std::array<double, 3>& phase,
                      int ridge_axis) {
  const double f = recipe.frequency * M_PI;
  switch (recipe.kind) {
    case DetailKind::kSinusoid:
      return (std::sin(f * p.x() + phase[0]) + std::sin(f * p.y() + phase[1]) +
              std::sin(f * p.z() + phase[2])) /
             3.0;
    case DetailKind::kGridBumps: {
      const auto wave = [&](double t, double ph) { return std::tanh(3.0 * std::sin(f * t + ph)); };
      return wave(p.x(), phase[0]) * wave(p.y(), phase[1]) * wave(p.z(), phase[2]);
    }
    case DetailKind::kRidges:
      return std::sin(f * p[ridge_axis] + phase[0]);
  }
  throw ContractError("detail_pattern: unknown kind");
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
  std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
  for (Index t = 0; t < mesh.triangle_count(); ++t) {
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    const Vec3 n = mesh.triangle_normal(t) * mesh.triangle_area(t);
    for (int c = 0; c < 3; ++c) normals[static_cast<std::size_t>(tri[c])] += n;
  }
  for (Vec3& n : normals) {
    const double len = n.norm();
    if (len > 0) n /= len;
  }
  return normals;
}

}  // namespace

ShapeSpec sample_spec(std::uint64_t dataset_seed, std::uint64_t id) {
  Rng rng(dataset_seed);
  Rng shape_rng = rng.fork(id);
  ShapeSpec spec;
  spec.family = static_cast<ShapeFamily>(id % 4);  // balanced round-robin
  spec.seed = shape_rng.bits();
  spec.detail.kind = static_cast<DetailKind>(shape_rng.uniform_int(3));
  spec.detail.amplitude = shape_rng.uniform(0.035, 0.07);
  spec.detail.frequency = shape_rng.uniform(2.0, 4.5);
  spec.detail.phase_seed = shape_rng.bits();
  return spec;
}

ShapePair gen_shape(const ShapeSpec& spec) {
  if (spec.detail.amplitude < 0.0 || spec.detail.amplitude > 0.12 || spec.detail.frequency > 8.0 ||
      spec.detail.amplitude * spec.detail.frequency > 0.6) {
    throw ConfigError("gen_shape: displacement recipe risks self-intersection (amplitude " +
                      std::to_string(spec.detail.amplitude) + ", frequency " +
                      std::to_string(spec.detail.frequency) + ")");
  }
  Rng rng(spec.seed);
  TriMesh base;
  switch (spec.family) {
    case ShapeFamily::kBox: base = build_box(rng); break;
    case ShapeFamily::kSuperellipsoid: base = build_superellipsoid(rng); break;
    case ShapeFamily::kSphere: base = build_sphere(rng); break;
    case ShapeFamily::kExtrudedPolygon: base = build_extruded_polygon(rng); break;
  }
  require_watertight(base, "gen_shape(" + std::string(family_name(spec.family)) + ")");

  ShapePair pair;
  pair.coarse = base;
  pair.detailed = base;
  if (spec.detail.amplitude > 0.0) {
    Rng phase_rng(spec.detail.phase_seed);
    const std::array<double, 3> phase{phase_rng.uniform(0, 2 * M_PI), phase_rng.uniform(0, 2 * M_PI),
                                      phase_rng.uniform(0, 2 * M_PI)};
    const int ridge_axis = static_cast<int>(phase_rng.uniform_int(3));
    const std::vector<Vec3> normals = vertex_normals(base);
    for (std::size_t i = 0; i < base.vertices.size(); ++i) {
      const double bump =
          spec.detail.amplitude * detail_pattern(spec.detail, base.vertices[i], phase, ridge_axis);
      pair.detailed.vertices[i] = base.vertices[i] + bump * normals[i];
    }
    require_watertight(pair.detailed, "gen_shape: displaced mesh");
  }
  normalize_mesh(pair.detailed);
  normalize_mesh(pair.coarse);
  return pair;
}

}  // namespace mars

#include "mars/geometry/mesh.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mars/error.hpp"

namespace mars {

Vec3 TriMesh::triangle_normal(Index t) const {
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  const Vec3 n = (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

double TriMesh::triangle_area(Index t) const {
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  return 0.5 *
         (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm();
}

double TriMesh::surface_area() const {
  double total = 0.0;
  for (Index t = 0; t < triangle_count(); ++t) total += triangle_area(t);
  return total;
}

void TriMesh::bounding_box(Vec3& lo, Vec3& hi) const {
  if (vertices.empty()) throw GeometryError("bounding_box: empty mesh");
  lo = hi = vertices[0];
  for (const Vec3& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
}

namespace {

// First integer of an OBJ face corner ("7", "7/2", "7//3").
int parse_face_index(const std::string& token, int line_no, const std::string& origin) {
  std::size_t end = token.find('/');
  const std::string head = end == std::string::npos ? token : token.substr(0, end);
  try {
    std::size_t pos = 0;
    const int idx = std::stoi(head, &pos);
    if (pos != head.size()) throw std::invalid_argument(head);
    return idx;
  } catch (const std::exception&) {
    throw ParseError(origin + ":" + std::to_string(line_no) + ": malformed face index '" + token + "'");
  }
}

}  // namespace

TriMesh parse_obj(const std::string& text, const std::string& origin) {
  TriMesh mesh;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": malformed vertex record '" + line + "'");
      }
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> corners;
      std::string token;
      while (ls >> token) {
        int idx = parse_face_index(token, line_no, origin);
        if (idx < 0) idx = static_cast<int>(mesh.vertices.size()) + idx + 1;  // relative index
        if (idx < 1 || idx > static_cast<int>(mesh.vertices.size())) {
          throw ParseError(origin + ":" + std::to_string(line_no) + ": vertex index " + token +
                           " out of range (have " + std::to_string(mesh.vertices.size()) + " vertices)");
        }
        corners.push_back(idx - 1);
      }
      if (corners.size() < 3) {
        throw ParseError(origin + ":" + std::to_string(line_no) + ": face with fewer than 3 vertices");
      }
      for (std::size_t i = 1; i + 1 < corners.size(); ++i) {
        mesh.triangles.emplace_back(corners[0], corners[i], corners[i + 1]);
      }
    }
    // vn/vt/o/g/s/usemtl/mtllib and other records are ignored
  }
  return mesh;
}

TriMesh load_obj(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_obj: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_obj(buf.str(), path);
}

std::string format_obj(const TriMesh& mesh) {
  std::ostringstream out;
  char line[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(line, sizeof(line), "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << line;
  }
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
  return out.str();
}

void save_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_obj: cannot open '" + path + "' for writing");
  out << format_obj(mesh);
  if (!out) throw IoError("save_obj: write failed for '" + path + "'");
}

bool is_watertight(const TriMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : mesh.triangles) {
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) return false;
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      if (a < 0 || b < 0 || a >= mesh.vertex_count() || b >= mesh.vertex_count()) return false;
      if (++directed[{a, b}] > 1) return false;  // same directed edge twice
    }
  }
  for (const auto& [edge, count] : directed) {
    auto rev = directed.find({edge.second, edge.first});
    if (rev == directed.end()) return false;
  }
  return true;
}

void require_watertight(const TriMesh& mesh, const std::string& context) {
  if (!is_watertight(mesh)) {
    throw GeometryError(context + ": mesh is not watertight (every edge must be shared by exactly "
                                  "two consistently wound triangles)");
  }
}

void normalize_mesh(TriMesh& mesh) {
  Vec3 lo, hi;
  mesh.bounding_box(lo, hi);
  const Vec3 center = 0.5 * (lo + hi);
  const double longest = (hi - lo).maxCoeff();
  if (longest <= 0.0) throw GeometryError("normalize_mesh: degenerate bounding box");
  const double scale = 1.9 / longest;
  for (Vec3& v : mesh.vertices) v = (v - center) * scale;
}

}  // namespace mars

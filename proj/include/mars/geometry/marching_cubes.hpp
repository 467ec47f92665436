#pragma once

#include <vector>

#include "mars/geometry/mesh.hpp"

namespace mars {

/// Classic 256-case marching cubes with linear edge interpolation over a
/// cubic lattice of resolution^3 node samples spanning [-1,1]^3 (node i at
/// -1 + 2i/(resolution-1)). Values above iso are interior. Shared edge
/// vertices are welded, so the output is a closed 2-manifold whenever the
/// isosurface stays off the lattice boundary. An empty mesh is a valid
/// result.
///
/// field is indexed as (x * resolution + y) * resolution + z.
TriMesh marching_cubes(const std::vector<double>& field, Index resolution, double iso);

}  // namespace mars

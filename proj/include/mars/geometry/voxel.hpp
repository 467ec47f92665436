#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mars/geometry/mesh.hpp"
#include "mars/geometry/occupancy.hpp"

namespace mars {

/// Boolean occupancy on a uniform lattice of cell centers over [-1,1]^3.
/// Linear index of cell (x, y, z) is (x * r + y) * r + z.
struct VoxelGrid {
  Index resolution = 0;
  std::vector<std::uint8_t> occupancy;  // resolution^3 entries

  static VoxelGrid empty(Index resolution);

  Index cell_count() const { return resolution * resolution * resolution; }
  Index index(Index x, Index y, Index z) const { return (x * resolution + y) * resolution + z; }
  bool at(Index x, Index y, Index z) const { return occupancy[static_cast<std::size_t>(index(x, y, z))] != 0; }
  void set(Index x, Index y, Index z, bool value) {
    occupancy[static_cast<std::size_t>(index(x, y, z))] = value ? 1 : 0;
  }
  double cell_center(Index i) const { return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(resolution); }
  Index occupied_count() const;
};

/// Cell occupied iff its center lies inside the mesh.
VoxelGrid voxelize(const TriMesh& mesh, Index resolution);
VoxelGrid voxelize(const MeshOccupancy& oracle, Index resolution);

/// Majority-rule downsampling by factor s: a coarse cell is occupied iff at
/// least half of its s^3 children are occupied (ties round up).
VoxelGrid downsample_grid(const VoxelGrid& grid, Index s);

/// |A intersect B| / |A union B|; empty-union convention: 1.
double strict_iou(const VoxelGrid& a, const VoxelGrid& b);
/// |A intersect B| / |A| with A the input grid; empty A is a contract error.
double loose_iou(const VoxelGrid& input, const VoxelGrid& output);

/// Flat binary export: magic "MARSVOX1", little-endian u32 resolution, then
/// resolution^3 bytes of 0/1.
void save_voxels(const VoxelGrid& grid, const std::string& path);
VoxelGrid load_voxels(const std::string& path);

}  // namespace mars

#include "mars/geometry/voxel.hpp"

#include <cstring>
#include <fstream>

#include "mars/error.hpp"

namespace mars {

VoxelGrid VoxelGrid::empty(Index resolution) {
  if (resolution <= 0) throw ContractError("VoxelGrid: resolution must be positive");
  VoxelGrid g;
  g.resolution = resolution;
  g.occupancy.assign(static_cast<std::size_t>(resolution * resolution * resolution), 0);
  return g;
}

Index VoxelGrid::occupied_count() const {
  Index n = 0;
  for (std::uint8_t v : occupancy) n += (v != 0);
  return n;
}

VoxelGrid voxelize(const MeshOccupancy& oracle, Index resolution) {
  VoxelGrid grid = VoxelGrid::empty(resolution);
  for (Index x = 0; x < resolution; ++x) {
    for (Index y = 0; y < resolution; ++y) {
      for (Index z = 0; z < resolution; ++z) {
        const Vec3 center(grid.cell_center(x), grid.cell_center(y), grid.cell_center(z));
        grid.set(x, y, z, oracle.inside(center));
      }
    }
  }
  return grid;
}

VoxelGrid voxelize(const TriMesh& mesh, Index resolution) {
  return voxelize(MeshOccupancy(mesh), resolution);
}

VoxelGrid downsample_grid(const VoxelGrid& grid, Index s) {
  if (s <= 0 || grid.resolution % s != 0) {
    throw ContractError("downsample_grid: resolution " + std::to_string(grid.resolution) +
                        " not divisible by factor " + std::to_string(s));
  }
  const Index r0 = grid.resolution / s;
  VoxelGrid coarse = VoxelGrid::empty(r0);
  const Index children = s * s * s;
  for (Index x = 0; x < r0; ++x) {
    for (Index y = 0; y < r0; ++y) {
      for (Index z = 0; z < r0; ++z) {
        Index occupied = 0;
        for (Index dx = 0; dx < s; ++dx) {
          for (Index dy = 0; dy < s; ++dy) {
            for (Index dz = 0; dz < s; ++dz) {
              occupied += grid.at(x * s + dx, y * s + dy, z * s + dz) ? 1 : 0;
            }
          }
        }
        coarse.set(x, y, z, 2 * occupied >= children);  // ties round up
      }
    }
  }
  return coarse;
}

namespace {

void require_same_resolution(const VoxelGrid& a, const VoxelGrid& b, const char* op) {
  if (a.resolution != b.resolution) {
    throw ContractError(std::string(op) + ": resolution mismatch " + std::to_string(a.resolution) +
                        " vs " + std::to_string(b.resolution));
  }
}

}  // namespace

double strict_iou(const VoxelGrid& a, const VoxelGrid& b) {
  require_same_resolution(a, b, "strict_iou");
  Index inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.occupancy.size(); ++i) {
    const bool av = a.occupancy[i] != 0, bv = b.occupancy[i] != 0;
    inter += (av && bv);
    uni += (av || bv);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double loose_iou(const VoxelGrid& input, const VoxelGrid& output) {
  require_same_resolution(input, output, "loose_iou");
  Index inter = 0, in_count = 0;
  for (std::size_t i = 0; i < input.occupancy.size(); ++i) {
    const bool iv = input.occupancy[i] != 0;
    in_count += iv;
    inter += (iv && output.occupancy[i] != 0);
  }
  if (in_count == 0) throw ContractError("loose_iou: input grid has no occupied voxels");
  return static_cast<double>(inter) / static_cast<double>(in_count);
}

namespace {
constexpr char kVoxMagic[8] = {'M', 'A', 'R', 'S', 'V', 'O', 'X', '1'};
}

void save_voxels(const VoxelGrid& grid, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_voxels: cannot open '" + path + "' for writing");
  out.write(kVoxMagic, 8);
  const std::uint32_t r = static_cast<std::uint32_t>(grid.resolution);
  char rb[4] = {static_cast<char>(r & 0xff), static_cast<char>((r >> 8) & 0xff),
                static_cast<char>((r >> 16) & 0xff), static_cast<char>((r >> 24) & 0xff)};
  out.write(rb, 4);
  out.write(reinterpret_cast<const char*>(grid.occupancy.data()),
            static_cast<std::streamsize>(grid.occupancy.size()));
  if (!out) throw IoError("save_voxels: write failed for '" + path + "'");
}

VoxelGrid load_voxels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_voxels: cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kVoxMagic, 8) != 0) {
    throw FormatError("load_voxels: bad magic in '" + path + "', expected MARSVOX1, found '" +
                      std::string(magic, magic + 8) + "'");
  }
  unsigned char rb[4];
  if (!in.read(reinterpret_cast<char*>(rb), 4)) throw FormatError("load_voxels: truncated header");
  const std::uint32_t r = static_cast<std::uint32_t>(rb[0]) | (static_cast<std::uint32_t>(rb[1]) << 8) |
                          (static_cast<std::uint32_t>(rb[2]) << 16) |
                          (static_cast<std::uint32_t>(rb[3]) << 24);
  VoxelGrid grid = VoxelGrid::empty(static_cast<Index>(r));
  if (!in.read(reinterpret_cast<char*>(grid.occupancy.data()),
               static_cast<std::streamsize>(grid.occupancy.size()))) {
    throw FormatError("load_voxels: truncated payload in '" + path + "'");
  }
  for (std::uint8_t& v : grid.occupancy) v = v ? 1 : 0;
  return grid;
}

}  // namespace mars

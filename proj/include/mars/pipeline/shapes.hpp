#pragma once

#include <cstdint>
#include <string>

#include "mars/geometry/mesh.hpp"

namespace mars {

enum class ShapeFamily { kBox, kSuperellipsoid, kSphere, kExtrudedPolygon };

const char* family_name(ShapeFamily family);
ShapeFamily family_from_name(const std::string& name);

enum class DetailKind { kSinusoid, kGridBumps, kRidges };

const char* detail_name(DetailKind kind);
DetailKind detail_from_name(const std::string& name);

/// Surface displacement recipe applied along base vertex normals.
/// amplitude 0 reproduces the coarse base exactly.
struct DetailRecipe {
  DetailKind kind = DetailKind::kSinusoid;
  double amplitude = 0.05;
  double frequency = 3.0;
  std::uint64_t phase_seed = 0;
};

struct ShapeSpec {
  ShapeFamily family = ShapeFamily::kBox;
  std::uint64_t seed = 0;  // drives base proportions
  DetailRecipe detail;
};

struct ShapePair {
  TriMesh detailed;
  TriMesh coarse;
};

/// Deterministic spec for shape number `id` under a dataset seed; families
/// rotate round-robin so any prefix stays balanced.
ShapeSpec sample_spec(std::uint64_t dataset_seed, std::uint64_t id);

/// Watertight coarse/detailed pair, both normalized into [-1,1]^3 with the
/// same canonical rule. Rejects displacement parameters strong enough to
/// risk self-intersection.
ShapePair gen_shape(const ShapeSpec& spec);

}  // namespace mars

#pragma once

#include "mars/geometry/sampling.hpp"

namespace mars {

/// Point-cloud F-score at distance threshold tau: harmonic mean of precision
/// (fraction of gen points within tau of some ref point) and recall (the
/// symmetric fraction); 0 when both are 0.
double f_score(const PointCloud& gen, const PointCloud& ref, double tau);
double f_score(const Points3& gen, const Points3& ref, double tau);

}  // namespace mars

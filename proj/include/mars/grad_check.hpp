#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mars/rng.hpp"
#include "mars/tensor.hpp"

namespace mars {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string worst_coord;
  bool passed = false;
};

/// Central-difference gradient check, independent of the reverse-mode path
/// it verifies: the analytic gradients come from one backward() call, the
/// numeric ones from pairs of plain forward evaluations with a coordinate
/// nudged by +-h. Checks up to max_coords_per_param sampled coordinates of
/// each parameter (0 = all).
inline GradCheckReport finite_diff_check(const std::function<Tensor<double>()>& f,
                                         const std::vector<Tensor<double>>& params, double h,
                                         double tol, Index max_coords_per_param = 0,
                                         std::uint64_t coord_seed = 0) {
  for (auto& p : params) {
    if (!const_cast<Tensor<double>&>(p).requires_grad()) {
      throw ContractError("finite_diff_check: parameter does not require grad");
    }
  }
  std::vector<VectorX<double>> analytic;
  {
    GradTape<double> tape;
    Tensor<double> loss = f();
    tape.backward(loss);
    for (auto& p : params) {
      analytic.push_back(p.has_grad() ? p.grad() : VectorX<double>::Zero(p.numel()));
    }
  }
  for (auto p : params) p.zero_grad();

  GradCheckReport report;
  Rng rng(coord_seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double> p = params[pi];
    std::vector<Index> coords;
    if (max_coords_per_param == 0 || p.numel() <= max_coords_per_param) {
      for (Index i = 0; i < p.numel(); ++i) coords.push_back(i);
    } else {
      for (Index i = 0; i < max_coords_per_param; ++i) {
        coords.push_back(static_cast<Index>(rng.uniform_int(static_cast<std::uint64_t>(p.numel()))));
      }
    }
    for (Index ci : coords) {
      const double saved = p.values()[ci];
      p.mutable_values()[ci] = saved + h;
      const double fp = f().item();
      p.mutable_values()[ci] = saved - h;
      const double fm = f().item();
      p.mutable_values()[ci] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double exact = analytic[pi][ci];
      // The 1e-6 floor keeps structurally-zero gradients (whose central
      // difference is pure rounding noise, ~eps/2h) from dominating.
      const double denom = std::max({std::abs(numeric), std::abs(exact), 1e-6});
      const double rel = std::abs(numeric - exact) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_analytic = exact;
        report.worst_numeric = numeric;
        report.worst_coord = "param " + std::to_string(pi) + " coord " + std::to_string(ci);
      }
    }
  }
  report.passed = report.max_rel_err <= tol;
  return report;
}

}  // namespace mars

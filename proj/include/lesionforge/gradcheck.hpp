#pragma once

// Finite-difference verification of every analytic loss gradient.

#include <cstdint>
#include <string>
#include <vector>

#include "lesionforge/volume.hpp"

namespace lesionforge {

struct GradCheckRow {
  std::string name;
  int instances = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  int instances = 100;
  std::uint64_t seed = 0;
  Index3 dims{8, 8, 8};
  double step = 1e-3;
  double tolerance = 1e-4;
};

/// Central differences against the analytic gradients of dice, longitudinal
/// (both modes), volumetric, spatial (both modes), total and the toy model's
/// chained weight gradient, each on `instances` random volumes.
std::vector<GradCheckRow> run_gradient_suite(const GradCheckOptions& options = {});

std::string format_gradient_table(const std::vector<GradCheckRow>& rows);

}  // namespace lesionforge

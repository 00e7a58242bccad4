#pragma once

#include "d3seg/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace d3seg {

/// Builds a scalar on the given tape from the parameters (bind them with
/// ParamBinding or Tape::param so the analytic gradient reaches the store).
using ScalarGraph = std::function<Var(Tape&, ParamStore&)>;

struct GradCheckOptions {
  double eps = 1e-6;
  /// Coordinates probed per parameter tensor; 0 probes every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  /// Ignore eps and difference at steps 1e-7, 1e-6, ..., 1e-3, keeping the
  /// largest step that still agrees with the smaller ones to within roundoff,
  /// refined by one Richardson step.
  /// Copes with leaky-ReLU kinks near the probe point and with gradients near
  /// the roundoff floor.
  bool sweep_steps = false;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  /// "name[index]" for every probe whose perturbed evaluation was not finite.
  std::vector<std::string> non_finite;
};

/// Compares reverse-mode gradients with central differences. The relative error
/// of one coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const ScalarGraph& f, ParamStore& params,
                           const GradCheckOptions& options = {});

}  // namespace d3seg

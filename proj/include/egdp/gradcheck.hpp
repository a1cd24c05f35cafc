#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "egdp/autodiff.hpp"
#include "egdp/params.hpp"

namespace egdp {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so that coordinates whose true
  // gradient is ~0 are judged on absolute error.
  double floor = 1e-6;
};

struct GradCheckReport {
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

// Builds the scalar loss on a fresh tape. Must be a pure function of the
// parameter values (fix any sampling noise outside the closure).
using LossBuilder = std::function<ad::Var(ad::Tape&)>;

// Compares backward() against central differences on every coordinate of
// every parameter whose name starts with `prefix` (all when empty).
GradCheckReport check_gradients(ParamStore& params, const LossBuilder& build, const GradCheckOptions& opts = {},
                                const std::string& prefix = "");

}  // namespace egdp

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "svae/ad/param_store.hpp"

namespace svae::ad {

struct GradientCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-7;
  // 0 checks every element; otherwise a seeded subset per parameter.
  std::size_t max_elements_per_param = 0;
  std::uint64_t sample_seed = 0;
  // Restricts the check to matching parameter names; null checks all tracked ones.
  std::function<bool(const std::string&)> filter;
};

struct ParamGradientCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool pass = true;
};

struct GradientCheckReport {
  std::vector<ParamGradientCheck> params;
  double max_rel_error = 0.0;
  bool pass = true;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences. `f` must be deterministic in the parameter values. Throws
/// NumericFault when `f` is non-finite at a probe point.
GradientCheckReport gradient_check(const std::function<Tensor(ParamStore&)>& f,
                                   ParamStore& params, const GradientCheckOptions& options = {});

}  // namespace svae::ad

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "t2i/tensor.hpp"

namespace t2i {

struct GradCheckOptions {
  /// Central-difference step, must lie in [1e-6, 1e-4].
  double eps = 1e-6;
  double tolerance = 1e-4;
  /// Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_parameter;
  bool passed = true;
  std::size_t probes = 0;
  /// Probes whose +eps / -eps evaluations fell on different sides of a
  /// ReLU-family kink; central differences are meaningless there.
  std::size_t kink_skips = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences for every parameter in `params` (declaration order breaks
/// ties). `f` must be a deterministic function of the parameter values.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace t2i

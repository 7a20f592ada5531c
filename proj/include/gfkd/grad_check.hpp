#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "gfkd/rng.hpp"

namespace gfkd {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_coord = 0;
};

// Central-difference gradient check.  For each checked coordinate i the
// analytic gradient is compared against (f(p + h*e_i) - f(p - h*e_i)) / (2h)
// with relative error |a - n| / max(|a|, |n|, 1e-8).
//
// `f` must be a deterministic function of `params`.  When `max_coords` is
// smaller than the parameter count, coordinates are sampled without
// replacement using `rng` (pass one when subsampling, otherwise it may be
// null).
GradCheckResult finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                  const std::vector<double>& params,
                                  const std::vector<double>& analytic, double h,
                                  std::size_t max_coords = SIZE_MAX, Rng* rng = nullptr);

}  // namespace gfkd

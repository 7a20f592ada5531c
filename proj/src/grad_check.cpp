#include "gfkd/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfkd/error.hpp"

namespace gfkd {

GradCheckResult finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                  const std::vector<double>& params,
                                  const std::vector<double>& analytic, double h,
                                  std::size_t max_coords, Rng* rng) {
  if (analytic.size() != params.size())
    throw ValidationError("finite_diff_check: gradient size " +
                          std::to_string(analytic.size()) + " != parameter size " +
                          std::to_string(params.size()));
  if (!(h > 0.0)) throw ValidationError("finite_diff_check: h must be positive");

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords < coords.size()) {
    if (!rng)
      throw ValidationError("finite_diff_check: subsampling coordinates needs an rng");
    rng->shuffle(coords);
    coords.resize(max_coords);
  }

  GradCheckResult res;
  std::vector<double> p = params;
  for (std::size_t i : coords) {
    const double keep = p[i];
    p[i] = keep + h;
    const double fp = f(p);
    p[i] = keep - h;
    const double fm = f(p);
    p[i] = keep;

    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_coord = i;
    }
    ++res.coords_checked;
  }
  return res;
}

}  // namespace gfkd

#pragma once

#include <map>
#include <string>
#include <vector>

#include "gfkd/params.hpp"

namespace gfkd {

// Poly learning-rate policy with an optional divide-by-step_decay_factor
// staircase every step_decay_every epochs (the two compose multiplicatively):
//   lr(iter, epoch) = base * (1 - iter/maxiter)^power * factor^floor(epoch/every)
// power = 0 disables the poly term, step_decay_every = 0 disables the
// staircase; iterations past maxiter clamp to the end of the curve.
struct Schedule {
  double base_lr = 0.0;
  std::size_t maxiter = 1;
  double power = 0.9;
  std::size_t step_decay_every = 50;
  double step_decay_factor = 0.1;

  double lr(std::size_t iter, std::size_t epoch) const;
};

// Adam(0.9, 0.999, 1e-8) or SGD with momentum 0.9.  Weight decay is folded
// into the gradient before the moment updates: g_eff = g + wd * p.  Gradients
// arrive keyed by parameter name; a missing entry means zero gradient.  A NaN
// or Inf gradient aborts with the offending parameter's name.
class Optimizer {
 public:
  enum class Kind { adam, sgd_momentum };

  Optimizer(Kind kind, double weight_decay);

  void step(ParamStore& store, const std::map<std::string, std::vector<double>>& grads,
            double lr);

  // moment buffers (and the Adam step counter) as checkpoint entries, prefixed
  // so they can live alongside the parameters they belong to
  std::vector<ParamStore::Entry> state_entries(const std::string& prefix) const;
  void load_state_entries(const std::string& prefix,
                          const std::vector<ParamStore::Entry>& entries);

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
  double weight_decay_;
  std::uint64_t t_ = 0;  // adam bias-correction step count
  std::map<std::string, std::vector<double>> m_;  // adam first moment / sgd velocity
  std::map<std::string, std::vector<double>> v_;  // adam second moment
};

}  // namespace gfkd

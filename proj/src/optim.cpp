#include "gfkd/optim.hpp"

#include <cmath>

#include "gfkd/error.hpp"

namespace gfkd {

double Schedule::lr(std::size_t iter, std::size_t epoch) const {
  if (maxiter == 0) throw ValidationError("schedule: maxiter must be positive");
  const double t = std::min(1.0, static_cast<double>(iter) / static_cast<double>(maxiter));
  double lr = base_lr;
  if (power > 0.0) lr *= std::pow(1.0 - t, power);
  if (step_decay_every > 0)
    lr *= std::pow(step_decay_factor, static_cast<double>(epoch / step_decay_every));
  return lr;
}

Optimizer::Optimizer(Kind kind, double weight_decay)
    : kind_(kind), weight_decay_(weight_decay) {
  if (weight_decay < 0.0) throw ValidationError("optimizer: negative weight decay");
}

void Optimizer::step(ParamStore& store,
                     const std::map<std::string, std::vector<double>>& grads, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8, kMomentum = 0.9;
  if (kind_ == Kind::adam) ++t_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));

  for (auto& e : store.entries()) {
    static const std::vector<double> kNoGrad;
    auto it = grads.find(e.name);
    const std::vector<double>& g = it == grads.end() ? kNoGrad : it->second;
    if (!g.empty() && g.size() != e.values.size())
      throw ValidationError("optimizer: gradient size " + std::to_string(g.size()) +
                            " != parameter " + e.name + " size " +
                            std::to_string(e.values.size()));
    for (double x : g)
      if (!std::isfinite(x))
        throw NumericError("optimizer: non-finite gradient for parameter " + e.name);

    auto& m = m_[e.name];
    m.resize(e.values.size(), 0.0);
    if (kind_ == Kind::adam) {
      auto& v = v_[e.name];
      v.resize(e.values.size(), 0.0);
      for (std::size_t i = 0; i < e.values.size(); ++i) {
        const double geff = (g.empty() ? 0.0 : g[i]) + weight_decay_ * e.values[i];
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * geff;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * geff * geff;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        e.values[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
      }
    } else {
      for (std::size_t i = 0; i < e.values.size(); ++i) {
        const double geff = (g.empty() ? 0.0 : g[i]) + weight_decay_ * e.values[i];
        m[i] = kMomentum * m[i] + geff;
        e.values[i] -= lr * m[i];
      }
    }
  }
}

std::vector<ParamStore::Entry> Optimizer::state_entries(const std::string& prefix) const {
  std::vector<ParamStore::Entry> out;
  out.push_back({prefix + "__step", {1}, {static_cast<double>(t_)}});
  for (const auto& [name, m] : m_) out.push_back({prefix + name + ".m", {m.size()}, m});
  if (kind_ == Kind::adam)
    for (const auto& [name, v] : v_) out.push_back({prefix + name + ".v", {v.size()}, v});
  return out;
}

void Optimizer::load_state_entries(const std::string& prefix,
                                   const std::vector<ParamStore::Entry>& entries) {
  m_.clear();
  v_.clear();
  t_ = 0;
  for (const auto& e : entries) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    const std::string tail = e.name.substr(prefix.size());
    if (tail == "__step") {
      t_ = static_cast<std::uint64_t>(e.values.at(0));
    } else if (tail.size() > 2 && tail.compare(tail.size() - 2, 2, ".m") == 0) {
      m_[tail.substr(0, tail.size() - 2)] = e.values;
    } else if (tail.size() > 2 && tail.compare(tail.size() - 2, 2, ".v") == 0) {
      v_[tail.substr(0, tail.size() - 2)] = e.values;
    }
  }
}

}  // namespace gfkd

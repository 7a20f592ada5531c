#include "gfkd/params.hpp"

#include <cmath>
#include <cstring>

#include "gfkd/error.hpp"

namespace gfkd {

void ParamStore::add_uniform(const std::string& name, Extents extents, std::size_t fan_in,
                             Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(numel(extents));
  for (double& x : v) x = rng.uniform(-bound, bound);
  add_values(name, std::move(extents), std::move(v));
}

void ParamStore::add_values(const std::string& name, Extents extents,
                            std::vector<double> values) {
  if (index_.count(name)) throw ValidationError("param store: duplicate name " + name);
  if (numel(extents) != values.size())
    throw ValidationError("param store: " + name + " shape " + shape_str(extents) +
                          " holds " + std::to_string(numel(extents)) + " values, got " +
                          std::to_string(values.size()));
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(extents), std::move(values)});
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("param store: unknown name " + name);
  return entries_[it->second];
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("param store: unknown name " + name);
  return entries_[it->second];
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.values.size();
  return n;
}

std::uint64_t ParamStore::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    mix_bytes(e.name.data(), e.name.size());
    for (std::size_t d : e.extents) {
      std::uint64_t x = d;
      mix_bytes(&x, sizeof x);
    }
    mix_bytes(e.values.data(), e.values.size() * sizeof(double));
  }
  return h;
}

ParamTensors::ParamTensors(const ParamStore& store, bool trainable) {
  for (const auto& e : store.entries())
    tensors_.emplace(e.name, trainable ? Tensor::leaf(e.extents, e.values)
                                       : Tensor::constant(e.extents, e.values));
}

const Tensor& ParamTensors::operator[](const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw ValidationError("param tensors: unknown name " + name);
  return it->second;
}

}  // namespace gfkd

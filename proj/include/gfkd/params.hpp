#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gfkd/rng.hpp"
#include "gfkd/tensor.hpp"

namespace gfkd {

// Named, ordered parameter collection.  Values are plain vectors; a forward
// pass materializes them as leaf tensors (trainable) or constants (frozen),
// and the optimizer writes updated values back by name.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Extents extents;
    std::vector<double> values;
  };

  // registers a new parameter initialized from fan-in-scaled uniform noise:
  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)); draw order is registration order
  void add_uniform(const std::string& name, Extents extents, std::size_t fan_in, Rng& rng);
  void add_values(const std::string& name, Extents extents, std::vector<double> values);

  bool has(const std::string& name) const;
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t total_values() const;

  // FNV-1a over names, shapes, and raw value bytes; order-sensitive
  std::uint64_t content_hash() const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Materialized view of a store for one forward pass: every parameter as a
// tensor, leaf or constant depending on `trainable`.
class ParamTensors {
 public:
  ParamTensors(const ParamStore& store, bool trainable);
  const Tensor& operator[](const std::string& name) const;
  const std::map<std::string, Tensor>& all() const { return tensors_; }

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace gfkd

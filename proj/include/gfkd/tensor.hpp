#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace gfkd {

// Extents in (batch, channel, height, width) order for 4-D data; lower ranks
// used freely for vectors/matrices/scalars.
using Extents = std::vector<std::size_t>;

std::size_t numel(const Extents& e);
std::string shape_str(const Extents& e);

namespace detail {

// One vertex of the forward graph.  `backward` receives dL/d(this node) and
// accumulates (+=) into the pre-zeroed gradient buffers of the parents; a null
// entry means that parent does not need a gradient.  Ops capture whatever
// forward state they need (input nodes, pooling argmaxes, im2col buffers) in
// the closure.
struct Node {
  Extents extents;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<double>& grad,
                     const std::vector<std::vector<double>*>& parent_grads)>
      backward;
};

}  // namespace detail

// Value-semantics handle to an immutable graph node.  Copies are cheap and
// share the node.  A tensor created via leaf() participates in gradients;
// constant() tensors (and everything derived only from constants) carry no
// lineage and act as frozen values.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Extents extents, std::vector<double> values);
  static Tensor leaf(Extents extents, std::vector<double> values);
  static Tensor zeros(const Extents& extents);
  static Tensor full(const Extents& extents, double value);
  static Tensor scalar_const(double value);

  bool defined() const { return node_ != nullptr; }
  const Extents& extents() const;
  std::size_t size() const;
  const std::vector<double>& data() const;
  bool requires_grad() const;
  // value of a one-element tensor
  double scalar() const;

  // node identity; keys the gradient map
  const void* id() const { return node_.get(); }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Result of a backward sweep: gradients keyed by node identity.  Valid while
// the tensors of the originating graph are alive.
class Gradients {
 public:
  // nullptr when `t` was not reached by the sweep (no lineage path)
  const std::vector<double>* find(const Tensor& t) const;
  // zero-filled when not reached, per the "unreachable leaves get zero" rule
  std::vector<double> get_or_zeros(const Tensor& t) const;

  void set(const void* id, std::vector<double> g);
  std::size_t count() const { return grads_.size(); }

 private:
  std::unordered_map<const void*, std::vector<double>> grads_;
};

// Reverse-mode sweep from a scalar loss.  Rejects non-scalar losses and
// losses with no lineage.  Visits each reachable node exactly once, in
// reverse topological order.
Gradients backward(const Tensor& loss);

}  // namespace gfkd

#include "gfkd/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "gfkd/error.hpp"

namespace gfkd {

std::size_t numel(const Extents& e) {
  std::size_t n = 1;
  for (std::size_t d : e) n *= d;
  return n;
}

std::string shape_str(const Extents& e) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < e.size(); ++i) os << (i ? "," : "") << e[i];
  os << ")";
  return os.str();
}

Tensor Tensor::constant(Extents extents, std::vector<double> values) {
  if (numel(extents) != values.size())
    throw ValidationError("tensor: " + shape_str(extents) + " holds " +
                          std::to_string(numel(extents)) + " values, got " +
                          std::to_string(values.size()));
  auto n = std::make_shared<detail::Node>();
  n->extents = std::move(extents);
  n->values = std::move(values);
  n->requires_grad = false;
  return Tensor(std::move(n));
}

Tensor Tensor::leaf(Extents extents, std::vector<double> values) {
  Tensor t = constant(std::move(extents), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::zeros(const Extents& extents) {
  return constant(extents, std::vector<double>(numel(extents), 0.0));
}

Tensor Tensor::full(const Extents& extents, double value) {
  return constant(extents, std::vector<double>(numel(extents), value));
}

Tensor Tensor::scalar_const(double value) { return constant({1}, {value}); }

const Extents& Tensor::extents() const {
  if (!node_) throw ValidationError("tensor: use of default-constructed tensor");
  return node_->extents;
}

std::size_t Tensor::size() const { return numel(extents()); }

const std::vector<double>& Tensor::data() const {
  if (!node_) throw ValidationError("tensor: use of default-constructed tensor");
  return node_->values;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::scalar() const {
  if (size() != 1)
    throw ValidationError("tensor: scalar() on shape " + shape_str(extents()));
  return data()[0];
}

const std::vector<double>* Gradients::find(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double> Gradients::get_or_zeros(const Tensor& t) const {
  if (const auto* g = find(t)) return *g;
  return std::vector<double>(t.size(), 0.0);
}

void Gradients::set(const void* id, std::vector<double> g) { grads_[id] = std::move(g); }

Gradients backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ValidationError("backward: loss must be a scalar tensor");
  if (!loss.requires_grad())
    throw ValidationError("backward: loss has no lineage (nothing to differentiate)");

  using detail::Node;

  // Iterative post-order DFS over the lineage-bearing subgraph.  The
  // post-order sequence is a topological order (children before parents of the
  // reversed graph), so walking it backwards propagates each node exactly once.
  std::vector<Node*> order;
  std::unordered_map<Node*, int> mark;  // 0 unseen, 1 on stack, 2 done
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  mark[loss.node().get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    bool descended = false;
    while (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!p->requires_grad) continue;  // frozen subtree: no gradient flows
      int& m = mark[p];
      if (m == 0) {
        m = 1;
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && stack.back().second >= stack.back().first->parents.size()) {
      order.push_back(stack.back().first);
      mark[stack.back().first] = 2;
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, std::vector<double>> acc;
  acc.reserve(order.size());
  for (Node* n : order) acc.emplace(n, std::vector<double>(numel(n->extents), 0.0));
  acc[loss.node().get()][0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;  // leaf
    std::vector<std::vector<double>*> parent_grads(n->parents.size(), nullptr);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      Node* p = n->parents[i].get();
      if (!p->requires_grad) continue;
      parent_grads[i] = &acc.at(p);
    }
    n->backward(acc.at(n), parent_grads);
  }

  Gradients out;
  for (auto& [node, g] : acc) out.set(node, std::move(g));
  return out;
}

}  // namespace gfkd

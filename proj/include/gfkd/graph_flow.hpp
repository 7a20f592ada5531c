#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gfkd/tensor.hpp"

namespace gfkd {

// Patch window of the salience mask: an odd edge length in {1,3,5,7,9}, or
// the whole map ("full").  Windows are clipped at the image border.
struct PatchSpec {
  bool full = false;
  int p = 3;

  static PatchSpec parse(const std::string& text);  // "3" or "full"
  std::string str() const;
  bool operator==(const PatchSpec&) const = default;
};

// Per-channel binary mask: ones exactly on the p x p window centered at the
// channel's maximum activation (first maximal pixel in row-major order on
// ties), clipped to the image.  The mask is a constant — gradients never flow
// through argmax placement.
struct SalienceMask {
  std::vector<double> values;             // C*H*W of {0,1}
  std::vector<std::size_t> argmax_flat;   // per channel, h*W + w
};
SalienceMask salience_mask(const Tensor& f, const PatchSpec& patch);

// Salience graph of one feature map (C x H x W): vertices gamma = mask ⊙ f,
// edges theta(c,k) = Euclidean distance between flattened gamma rows.
struct SalienceGraph {
  Tensor gamma;  // C x H x W, carries lineage of f
  Tensor theta;  // C x C, symmetric, zero diagonal
  PatchSpec patch;
  Extents source_extents;
};
SalienceGraph salience_graph(const Tensor& f, const PatchSpec& patch);

// Variation between the salience graphs of two layers of one network:
// v(c) = ||gamma_i(c) - gamma_i2(c)||^2, e(c,k) = (theta_i(c,k) - theta_i2(c,k))^2.
struct VariationGraph {
  Tensor v;  // C
  Tensor e;  // C x C
};
VariationGraph variation_graph(const SalienceGraph& sg_i, const SalienceGraph& sg_i2);

// Distillation loss between teacher and student variation graphs:
//   L_vertex = (1/(2*C))   * sum_c   (v_t(c)   - v_s(c))^2
//   L_edge   = (1/(2*C^2)) * sum_c,k (e_t(c,k) - e_s(c,k))^2
// (one tap pair, so the layer-set size is 1 and drops out).  The lambda
// weights are applied later, once, in the objective assembly.
std::pair<Tensor, Tensor> vg_loss(const VariationGraph& vg_t, const VariationGraph& vg_s);

// Batched convenience used by the trainer: builds per-sample graphs from
// B x C x H x W tap pairs and averages the per-sample losses over the batch.
std::pair<Tensor, Tensor> vg_loss_batched(const Tensor& ft_i, const Tensor& ft_i2,
                                          const Tensor& fs_i, const Tensor& fs_i2,
                                          const PatchSpec& patch);

// Brute-force oracle: quadruple-loop re-derivation of mask, gamma, theta, v, e
// with no code shared with the production path above.  Values only.
struct VariationGraphValues {
  std::vector<double> v;  // C
  std::vector<double> e;  // C*C
};
VariationGraphValues reference_oracle(const std::vector<double>& f_i,
                                      const std::vector<double>& f_i2, std::size_t C,
                                      std::size_t H, std::size_t W, const PatchSpec& patch);

}  // namespace gfkd

#pragma once

#include <cstdint>
#include <vector>

#include "gfkd/tensor.hpp"

namespace gfkd {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor square(const Tensor& a);

// ---- reductions (axes empty: reduce everything to a scalar) ----
Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes = {});
Tensor mean(const Tensor& a, const std::vector<std::size_t>& axes = {});
Tensor sq_norm(const Tensor& a, const std::vector<std::size_t>& axes = {});

// ---- activations ----
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);

// ---- convolution family (x is BxCxHxW) ----
// w: OxCxKxK, cross-correlation convention
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding);
// w: C_in x C_out x K x K; forward geometry equals conv2d's gradient geometry
Tensor conv2d_transposed(const Tensor& x, const Tensor& w, const Tensor& b,
                         std::size_t stride, std::size_t padding);
// 3x3, stride 1, pad 1, one filter per channel; w: Cx1x3x3
Tensor conv2d_depthwise(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- shape ops ----
Tensor max_pool2(const Tensor& x);
Tensor upsample_nearest2(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Extents extents);
Tensor slice_batch(const Tensor& x, std::size_t index);  // BxCxHxW -> CxHxW

// ---- network heads ----
Tensor softmax_over_classes(const Tensor& logits, double tau);
Tensor global_avg_pool(const Tensor& x);                           // BxCxHxW -> BxC
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);  // (BxC,OxC,O) -> BxO

// Euclidean distance between every pair of rows: CxN -> CxC, symmetric, zero
// diagonal.  Zero-distance pairs get zero gradient (the only symmetric choice
// for the sqrt kink).
Tensor pairwise_row_distance(const Tensor& x);

// same values, no lineage
Tensor detach(const Tensor& x);

// ---- fused losses (bespoke backward rules) ----
// Mean negative log-likelihood over the pixels of labeled samples only;
// labels hold one class id per (b,h,w); labeled holds one flag per sample.
// A batch with no labeled sample yields 0 with zero gradient.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             const std::vector<std::uint8_t>& labeled);
// (1/(B*H*W)) * sum z_s * log(z_s / z_t); z_t floored at 1e-12; 0*log 0 == 0.
// Rejects inputs whose per-pixel class sums stray from 1 by more than 1e-6.
Tensor kl_divergence(const Tensor& z_s, const Tensor& z_t);

}  // namespace gfkd

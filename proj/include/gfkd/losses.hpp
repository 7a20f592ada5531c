#pragma once

#include <cstdint>
#include <vector>

#include "gfkd/tensor.hpp"

namespace gfkd {

// Evaluation counters for the ablation contract: a disabled component must
// never evaluate its loss, and these counters prove it.
struct LossCallCounts {
  std::uint64_t vg = 0;
  std::uint64_t kd = 0;
  std::uint64_t adv_g = 0;
  std::uint64_t adv_d = 0;
  std::uint64_t rec = 0;
  std::uint64_t ce = 0;
};
LossCallCounts loss_call_counts();
void reset_loss_call_counts();

namespace detail {
// the batched graph loss lives in graph_flow.cpp but its evaluations are
// counted here with the rest
void count_vg_evaluation();
}  // namespace detail

// mean squared elementwise difference between a feature map and its
// reconstruction
Tensor rec_loss(const Tensor& f_t, const Tensor& recon);

// per-pixel KL from student to target distribution, averaged over batch and
// pixels (see kl_divergence for the floor/zero conventions)
Tensor kd_loss(const Tensor& z_s, const Tensor& z_t);

// Wasserstein critic losses assembled from per-sample scores (shape (B,)).
// adv_loss_d is what the critic minimizes; adv_loss_g is what the student
// maximizes (it enters the total with a minus sign).
Tensor adv_loss_d_from_scores(const Tensor& scores_s, const Tensor& scores_t);
Tensor adv_loss_g_from_scores(const Tensor& scores_s);

// cross-entropy over labeled samples only; counts as one ce evaluation
Tensor ce_loss(const Tensor& logits, const std::vector<int>& labels,
               const std::vector<std::uint8_t>& labeled);

// Assembly of the training objective:
//   total = l_ce + l1*l_vertex + l2*l_edge - l3*l_g + l4*l_kd
// Undefined (default-constructed) tensors mark disabled terms and are skipped
// outright, which is also what a zero lambda does: the term is never touched,
// so ablations measure exactly what they claim.
struct LossBundle {
  Tensor l_ce;
  Tensor l_vertex;
  Tensor l_edge;
  Tensor l_g;
  Tensor l_kd;
  double lambda1 = 0.0, lambda2 = 0.0, lambda3 = 0.0, lambda4 = 0.0;
};
Tensor total_loss(const LossBundle& bundle);

}  // namespace gfkd

#include "gfkd/losses.hpp"

#include "gfkd/error.hpp"
#include "gfkd/ops.hpp"

namespace gfkd {

namespace {
LossCallCounts g_counts;
}

LossCallCounts loss_call_counts() { return g_counts; }
void reset_loss_call_counts() { g_counts = LossCallCounts{}; }

void detail::count_vg_evaluation() { ++g_counts.vg; }

Tensor rec_loss(const Tensor& f_t, const Tensor& recon) {
  ++g_counts.rec;
  if (f_t.extents() != recon.extents())
    throw ValidationError("rec_loss: shape mismatch " + shape_str(f_t.extents()) + " vs " +
                          shape_str(recon.extents()));
  return mean(square(sub(f_t, recon)));
}

Tensor kd_loss(const Tensor& z_s, const Tensor& z_t) {
  ++g_counts.kd;
  return kl_divergence(z_s, z_t);
}

Tensor adv_loss_d_from_scores(const Tensor& scores_s, const Tensor& scores_t) {
  ++g_counts.adv_d;
  if (scores_s.extents() != scores_t.extents())
    throw ValidationError("adv_loss_d: batch mismatch " + shape_str(scores_s.extents()) +
                          " vs " + shape_str(scores_t.extents()));
  return sub(mean(scores_s), mean(scores_t));
}

Tensor adv_loss_g_from_scores(const Tensor& scores_s) {
  ++g_counts.adv_g;
  return mean(scores_s);
}

Tensor ce_loss(const Tensor& logits, const std::vector<int>& labels,
               const std::vector<std::uint8_t>& labeled) {
  ++g_counts.ce;
  return softmax_cross_entropy(logits, labels, labeled);
}

Tensor total_loss(const LossBundle& b) {
  if (b.lambda1 < 0 || b.lambda2 < 0 || b.lambda3 < 0 || b.lambda4 < 0)
    throw ValidationError("total_loss: lambda weights must be non-negative");

  // Terms are folded in one by one; a disabled term (undefined tensor or zero
  // weight) leaves the partial sum bitwise untouched.
  Tensor total;
  auto fold = [&total](const Tensor& term, double weight) {
    if (!term.defined() || weight == 0.0) return;
    Tensor scaled = (weight == 1.0) ? term : scale(term, weight);
    total = total.defined() ? add(total, scaled) : scaled;
  };
  fold(b.l_ce, 1.0);
  fold(b.l_vertex, b.lambda1);
  fold(b.l_edge, b.lambda2);
  fold(b.l_g, -b.lambda3);
  fold(b.l_kd, b.lambda4);
  if (!total.defined()) total = Tensor::scalar_const(0.0);
  return total;
}

}  // namespace gfkd

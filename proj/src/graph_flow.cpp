#include "gfkd/graph_flow.hpp"

#include <algorithm>

#include "gfkd/error.hpp"
#include "gfkd/losses.hpp"
#include "gfkd/ops.hpp"

namespace gfkd {

PatchSpec PatchSpec::parse(const std::string& text) {
  if (text == "full") return PatchSpec{true, 0};
  for (int p : {1, 3, 5, 7, 9})
    if (text == std::to_string(p)) return PatchSpec{false, p};
  throw ValidationError("patch_size must be one of 1,3,5,7,9,\"full\"; got \"" + text +
                        "\"");
}

std::string PatchSpec::str() const { return full ? "full" : std::to_string(p); }

SalienceMask salience_mask(const Tensor& f, const PatchSpec& patch) {
  if (f.extents().size() != 3)
    throw ValidationError("salience_mask: expected CxHxW, got " + shape_str(f.extents()));
  const std::size_t C = f.extents()[0], H = f.extents()[1], W = f.extents()[2];
  const auto& fv = f.data();

  SalienceMask m;
  m.argmax_flat.resize(C);
  if (patch.full) {
    m.values.assign(C * H * W, 1.0);
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < H * W; ++i)
        if (fv[c * H * W + i] > fv[c * H * W + best]) best = i;
      m.argmax_flat[c] = best;
    }
    return m;
  }

  m.values.assign(C * H * W, 0.0);
  const std::ptrdiff_t r = patch.p / 2;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < H * W; ++i)
      if (fv[c * H * W + i] > fv[c * H * W + best]) best = i;
    m.argmax_flat[c] = best;
    const std::ptrdiff_t cy = static_cast<std::ptrdiff_t>(best / W);
    const std::ptrdiff_t cx = static_cast<std::ptrdiff_t>(best % W);
    const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, cy - r);
    const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H - 1, cy + r);
    const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, cx - r);
    const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W - 1, cx + r);
    for (std::ptrdiff_t y = y0; y <= y1; ++y)
      for (std::ptrdiff_t x = x0; x <= x1; ++x) m.values[(c * H + y) * W + x] = 1.0;
  }
  return m;
}

SalienceGraph salience_graph(const Tensor& f, const PatchSpec& patch) {
  SalienceMask mask = salience_mask(f, patch);
  const std::size_t C = f.extents()[0], HW = f.extents()[1] * f.extents()[2];
  Tensor mask_t = Tensor::constant(f.extents(), std::move(mask.values));
  Tensor gamma = mul(f, mask_t);
  Tensor theta = pairwise_row_distance(reshape(gamma, {C, HW}));
  return SalienceGraph{std::move(gamma), std::move(theta), patch, f.extents()};
}

VariationGraph variation_graph(const SalienceGraph& sg_i, const SalienceGraph& sg_i2) {
  if (sg_i.source_extents != sg_i2.source_extents)
    throw ValidationError("variation_graph: layer shapes differ, " +
                          shape_str(sg_i.source_extents) + " vs " +
                          shape_str(sg_i2.source_extents));
  if (!(sg_i.patch == sg_i2.patch))
    throw ValidationError("variation_graph: patch specs differ, " + sg_i.patch.str() +
                          " vs " + sg_i2.patch.str());
  VariationGraph vg;
  vg.v = sq_norm(sub(sg_i.gamma, sg_i2.gamma), {1, 2});
  vg.e = square(sub(sg_i.theta, sg_i2.theta));
  return vg;
}

std::pair<Tensor, Tensor> vg_loss(const VariationGraph& vg_t, const VariationGraph& vg_s) {
  const std::size_t C = vg_t.v.extents()[0];
  if (vg_s.v.extents()[0] != C)
    throw ValidationError("vg_loss: channel counts differ, " + std::to_string(C) + " vs " +
                          std::to_string(vg_s.v.extents()[0]));
  Tensor l_vertex = scale(sum(square(sub(vg_t.v, vg_s.v))), 1.0 / (2.0 * C));
  Tensor l_edge = scale(sum(square(sub(vg_t.e, vg_s.e))), 1.0 / (2.0 * C * C));
  return {std::move(l_vertex), std::move(l_edge)};
}

std::pair<Tensor, Tensor> vg_loss_batched(const Tensor& ft_i, const Tensor& ft_i2,
                                          const Tensor& fs_i, const Tensor& fs_i2,
                                          const PatchSpec& patch) {
  detail::count_vg_evaluation();
  for (const Tensor* t : {&ft_i, &ft_i2, &fs_i, &fs_i2})
    if (t->extents().size() != 4)
      throw ValidationError("vg_loss_batched: expected BxCxHxW taps, got " +
                            shape_str(t->extents()));
  const std::size_t B = ft_i.extents()[0];
  if (fs_i.extents()[0] != B || ft_i2.extents()[0] != B || fs_i2.extents()[0] != B)
    throw ValidationError("vg_loss_batched: batch sizes differ");
  if (ft_i.extents()[1] != fs_i.extents()[1])
    throw ValidationError(
        "vg_loss_batched: teacher and student tap channels differ (" +
        std::to_string(ft_i.extents()[1]) + " vs " + std::to_string(fs_i.extents()[1]) +
        "); paraphrase the teacher taps or match the widths");

  Tensor acc_v, acc_e;
  for (std::size_t b = 0; b < B; ++b) {
    VariationGraph vg_t = variation_graph(salience_graph(slice_batch(ft_i, b), patch),
                                          salience_graph(slice_batch(ft_i2, b), patch));
    VariationGraph vg_s = variation_graph(salience_graph(slice_batch(fs_i, b), patch),
                                          salience_graph(slice_batch(fs_i2, b), patch));
    auto [lv, le] = vg_loss(vg_t, vg_s);
    acc_v = b ? add(acc_v, lv) : lv;
    acc_e = b ? add(acc_e, le) : le;
  }
  return {scale(acc_v, 1.0 / B), scale(acc_e, 1.0 / B)};
}

}  // namespace gfkd

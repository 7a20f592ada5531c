#include "gfkd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

#include "gfkd/error.hpp"
#include "gfkd/gemm.hpp"

namespace gfkd {
namespace {

using detail::Node;
using Backward = std::function<void(const std::vector<double>&,
                                    const std::vector<std::vector<double>*>&)>;

// Builds the result node.  When no parent carries lineage the parents and the
// backward closure are dropped entirely, so frozen subgraphs cost nothing at
// backward time and "no lineage => zero gradient contribution" holds for free.
Tensor make_op(Extents extents, std::vector<double> values,
               std::initializer_list<Tensor> parents, Backward bw) {
  auto n = std::make_shared<Node>();
  n->extents = std::move(extents);
  n->values = std::move(values);
  for (const Tensor& p : parents)
    if (p.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    for (const Tensor& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.extents() != b.extents())
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.extents()) +
                          " vs " + shape_str(b.extents()));
}

void check_rank4(const char* op, const Tensor& t) {
  if (t.extents().size() != 4)
    throw ValidationError(std::string(op) + ": expected BxCxHxW, got " +
                          shape_str(t.extents()));
}

// floor applied to the target distribution inside kl_divergence; namespace
// scope so the backward closure can read it without a capture
constexpr double kKlFloor = 1e-12;

}  // namespace

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> v(a.size());
  const auto &av = a.data(), &bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  return make_op(a.extents(), std::move(v), {a, b},
                 [](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
                   for (int p = 0; p < 2; ++p)
                     if (pg[p])
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[p])[i] += g[i];
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> v(a.size());
  const auto &av = a.data(), &bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  return make_op(a.extents(), std::move(v), {a, b},
                 [](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                   if (pg[1])
                     for (std::size_t i = 0; i < g.size(); ++i) (*pg[1])[i] -= g[i];
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> v(a.size());
  const auto &av = a.data(), &bv = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return make_op(a.extents(), std::move(v), {a, b},
                 [an, bn](const std::vector<double>& g,
                          const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < g.size(); ++i)
                       (*pg[0])[i] += g[i] * bn->values[i];
                   if (pg[1])
                     for (std::size_t i = 0; i < g.size(); ++i)
                       (*pg[1])[i] += g[i] * an->values[i];
                 });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * s;
  return make_op(a.extents(), std::move(v), {a},
                 [s](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * s;
                 });
}

Tensor square(const Tensor& a) {
  std::vector<double> v(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * av[i];
  auto an = a.node();
  return make_op(a.extents(), std::move(v), {a},
                 [an](const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < g.size(); ++i)
                       (*pg[0])[i] += 2.0 * an->values[i] * g[i];
                 });
}

// ---------------------------------------------------------------- reductions

namespace {

enum class ReduceKind { sum, mean, sq_norm };

Tensor reduce_impl(ReduceKind kind, const Tensor& a, std::vector<std::size_t> axes) {
  const Extents& ext = a.extents();
  const std::size_t rank = ext.size();
  if (axes.empty()) {
    axes.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) axes[i] = i;
  }
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t ax : axes)
    if (ax >= rank)
      throw ValidationError("reduce: axis " + std::to_string(ax) + " out of range for " +
                            shape_str(ext));

  std::vector<bool> reduced(rank, false);
  for (std::size_t ax : axes) reduced[ax] = true;

  Extents out_ext;
  std::size_t reduced_count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i])
      reduced_count *= ext[i];
    else
      out_ext.push_back(ext[i]);
  }
  if (out_ext.empty()) out_ext = {1};
  if (kind == ReduceKind::mean && reduced_count == 0)
    throw ValidationError("mean: reduction over an empty extent in " + shape_str(ext));

  // input strides, and the stride each axis contributes to the output index
  std::vector<std::size_t> istride(rank, 1), ostride(rank, 0);
  for (std::size_t i = rank; i-- > 1;) istride[i - 1] = istride[i] * ext[i];
  {
    std::size_t run = 1;
    for (std::size_t i = rank; i-- > 0;) {
      if (!reduced[i]) {
        ostride[i] = run;
        run *= ext[i];
      }
    }
  }

  // captured by value: the backward closure outlives this frame
  auto out_index = [rank, istride, ostride, ext](std::size_t flat) {
    std::size_t o = 0;
    for (std::size_t ax = 0; ax < rank; ++ax) o += ((flat / istride[ax]) % ext[ax]) * ostride[ax];
    return o;
  };

  const auto& av = a.data();
  std::vector<double> v(numel(out_ext), 0.0);
  for (std::size_t i = 0; i < av.size(); ++i) {
    double x = av[i];
    v[out_index(i)] += (kind == ReduceKind::sq_norm) ? x * x : x;
  }
  if (kind == ReduceKind::mean)
    for (double& x : v) x /= static_cast<double>(reduced_count);

  auto an = a.node();
  double inv_cnt = 1.0 / static_cast<double>(std::max<std::size_t>(reduced_count, 1));
  return make_op(std::move(out_ext), std::move(v), {a},
                 [an, kind, inv_cnt, out_index](const std::vector<double>& g,
                                                const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   auto& dst = *pg[0];
                   for (std::size_t i = 0; i < dst.size(); ++i) {
                     double go = g[out_index(i)];
                     switch (kind) {
                       case ReduceKind::sum: dst[i] += go; break;
                       case ReduceKind::mean: dst[i] += go * inv_cnt; break;
                       case ReduceKind::sq_norm: dst[i] += go * 2.0 * an->values[i]; break;
                     }
                   }
                 });
}

}  // namespace

Tensor sum(const Tensor& a, const std::vector<std::size_t>& axes) {
  return reduce_impl(ReduceKind::sum, a, axes);
}
Tensor mean(const Tensor& a, const std::vector<std::size_t>& axes) {
  return reduce_impl(ReduceKind::mean, a, axes);
}
Tensor sq_norm(const Tensor& a, const std::vector<std::size_t>& axes) {
  return reduce_impl(ReduceKind::sq_norm, a, axes);
}

// ---------------------------------------------------------------- activations

Tensor relu(const Tensor& a) {
  std::vector<double> v(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] > 0.0 ? av[i] : 0.0;
  auto an = a.node();
  return make_op(a.extents(), std::move(v), {a},
                 [an](const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (an->values[i] > 0.0) (*pg[0])[i] += g[i];
                 });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  if (!(slope > 0.0 && slope < 1.0))
    throw ValidationError("leaky_relu: slope must lie in (0,1), got " + std::to_string(slope));
  std::vector<double> v(a.size());
  const auto& av = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] > 0.0 ? av[i] : slope * av[i];
  auto an = a.node();
  return make_op(a.extents(), std::move(v), {a},
                 [an, slope](const std::vector<double>& g,
                             const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < g.size(); ++i)
                       (*pg[0])[i] += g[i] * (an->values[i] > 0.0 ? 1.0 : slope);
                 });
}

// ---------------------------------------------------------------- convolution

namespace {

// cols is (C*K*K) x (H_out*W_out), row index (c*K+ky)*K+kx
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, std::size_t K,
            std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
            double* cols) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < K; ++ky)
      for (std::size_t kx = 0; kx < K; ++kx) {
        double* row = cols + ((c * K + ky) * K + kx) * (Ho * Wo);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            row[oy * Wo + ox] =
                (iy >= 0 && iy < static_cast<std::ptrdiff_t>(H) && ix >= 0 &&
                 ix < static_cast<std::ptrdiff_t>(W))
                    ? x[(c * H + iy) * W + ix]
                    : 0.0;
          }
        }
      }
}

// adjoint of im2col: scatter-add cols back into the image
void col2im_add(const double* cols, std::size_t C, std::size_t H, std::size_t W,
                std::size_t K, std::size_t stride, std::size_t pad, std::size_t Ho,
                std::size_t Wo, double* x) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < K; ++ky)
      for (std::size_t kx = 0; kx < K; ++kx) {
        const double* row = cols + ((c * K + ky) * K + kx) * (Ho * Wo);
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            x[(c * H + iy) * W + ix] += row[oy * Wo + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding) {
  check_rank4("conv2d input", x);
  check_rank4("conv2d weight", w);
  const std::size_t B = x.extents()[0], C = x.extents()[1], H = x.extents()[2],
                    W = x.extents()[3];
  const std::size_t O = w.extents()[0], K = w.extents()[2];
  if (w.extents()[1] != C)
    throw ValidationError("conv2d: weight expects " + std::to_string(w.extents()[1]) +
                          " input channels, input has " + std::to_string(C));
  if (w.extents()[3] != K) throw ValidationError("conv2d: kernel must be square");
  if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
  if (K > H + 2 * padding || K > W + 2 * padding)
    throw ValidationError("conv2d: kernel " + std::to_string(K) + " exceeds padded input " +
                          shape_str(x.extents()));
  if (b.extents() != Extents{O})
    throw ValidationError("conv2d: bias shape " + shape_str(b.extents()) + ", want (" +
                          std::to_string(O) + ")");
  const std::size_t Ho = (H + 2 * padding - K) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - K) / stride + 1;
  const std::size_t HWo = Ho * Wo;

  std::vector<double> y(B * O * HWo);
  auto xn = x.node(), wn = w.node();

  if (K == 1 && stride == 1 && padding == 0) {
    // pointwise fast path: the input already is the column matrix
    for (std::size_t bi = 0; bi < B; ++bi) {
      double* yb = y.data() + bi * O * HWo;
      dgemm_rm(false, false, O, HWo, C, 1.0, wn->values.data(), C,
               xn->values.data() + bi * C * HWo, HWo, 0.0, yb, HWo);
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t p = 0; p < HWo; ++p) yb[o * HWo + p] += b.data()[o];
    }
    return make_op(
        {B, O, Ho, Wo}, std::move(y), {x, w, b},
        [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
          for (std::size_t bi = 0; bi < B; ++bi) {
            const double* gb = g.data() + bi * O * HWo;
            if (pg[0])
              dgemm_rm(true, false, C, HWo, O, 1.0, wn->values.data(), C, gb, HWo, 1.0,
                       pg[0]->data() + bi * C * HWo, HWo);
            if (pg[1])
              dgemm_rm(false, true, O, C, HWo, 1.0, gb, HWo,
                       xn->values.data() + bi * C * HWo, HWo, 1.0, pg[1]->data(), C);
          }
          if (pg[2])
            for (std::size_t bi = 0; bi < B; ++bi)
              for (std::size_t o = 0; o < O; ++o)
                for (std::size_t p = 0; p < HWo; ++p)
                  (*pg[2])[o] += g[(bi * O + o) * HWo + p];
        });
  }

  const std::size_t CKK = C * K * K;
  auto cols = std::make_shared<std::vector<double>>(B * CKK * HWo);
  for (std::size_t bi = 0; bi < B; ++bi) {
    double* cb = cols->data() + bi * CKK * HWo;
    im2col(xn->values.data() + bi * C * H * W, C, H, W, K, stride, padding, Ho, Wo, cb);
    double* yb = y.data() + bi * O * HWo;
    dgemm_rm(false, false, O, HWo, CKK, 1.0, wn->values.data(), CKK, cb, HWo, 0.0, yb, HWo);
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t p = 0; p < HWo; ++p) yb[o * HWo + p] += b.data()[o];
  }

  return make_op(
      {B, O, Ho, Wo}, std::move(y), {x, w, b},
      [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        std::vector<double> dcols(CKK * HWo);
        for (std::size_t bi = 0; bi < B; ++bi) {
          const double* gb = g.data() + bi * O * HWo;
          const double* cb = cols->data() + bi * CKK * HWo;
          if (pg[1])
            dgemm_rm(false, true, O, CKK, HWo, 1.0, gb, HWo, cb, HWo, 1.0, pg[1]->data(),
                     CKK);
          if (pg[0]) {
            dgemm_rm(true, false, CKK, HWo, O, 1.0, wn->values.data(), CKK, gb, HWo, 0.0,
                     dcols.data(), HWo);
            col2im_add(dcols.data(), C, H, W, K, stride, padding, Ho, Wo,
                       pg[0]->data() + bi * C * H * W);
          }
          if (pg[2])
            for (std::size_t o = 0; o < O; ++o)
              for (std::size_t p = 0; p < HWo; ++p) (*pg[2])[o] += gb[o * HWo + p];
        }
      });
}

Tensor conv2d_transposed(const Tensor& x, const Tensor& w, const Tensor& b,
                         std::size_t stride, std::size_t padding) {
  check_rank4("conv2d_transposed input", x);
  check_rank4("conv2d_transposed weight", w);
  const std::size_t B = x.extents()[0], Ci = x.extents()[1], H = x.extents()[2],
                    W = x.extents()[3];
  const std::size_t Co = w.extents()[1], K = w.extents()[2];
  if (w.extents()[0] != Ci)
    throw ValidationError("conv2d_transposed: weight expects " +
                          std::to_string(w.extents()[0]) + " input channels, input has " +
                          std::to_string(Ci));
  if (w.extents()[3] != K) throw ValidationError("conv2d_transposed: kernel must be square");
  if (stride < 1) throw ValidationError("conv2d_transposed: stride must be >= 1");
  if (b.extents() != Extents{Co})
    throw ValidationError("conv2d_transposed: bias shape " + shape_str(b.extents()) +
                          ", want (" + std::to_string(Co) + ")");
  const std::ptrdiff_t ho = static_cast<std::ptrdiff_t>((H - 1) * stride + K) -
                            2 * static_cast<std::ptrdiff_t>(padding);
  const std::ptrdiff_t wo = static_cast<std::ptrdiff_t>((W - 1) * stride + K) -
                            2 * static_cast<std::ptrdiff_t>(padding);
  if (ho < 1 || wo < 1)
    throw ValidationError("conv2d_transposed: output collapses to nothing for " +
                          shape_str(x.extents()));
  const std::size_t Ho = static_cast<std::size_t>(ho), Wo = static_cast<std::size_t>(wo);
  const std::size_t COKK = Co * K * K, HWi = H * W;

  // reorder w (Ci,Co,K,K) into (Co*K*K) x Ci so one GEMM produces the columns
  auto wr = std::make_shared<std::vector<double>>(COKK * Ci);
  {
    const auto& wv = w.data();
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t k = 0; k < K * K; ++k)
          (*wr)[(co * K * K + k) * Ci + ci] = wv[(ci * Co + co) * K * K + k];
  }

  std::vector<double> y(B * Co * Ho * Wo, 0.0);
  auto xn = x.node();
  std::vector<double> colsb(COKK * HWi);
  for (std::size_t bi = 0; bi < B; ++bi) {
    dgemm_rm(false, false, COKK, HWi, Ci, 1.0, wr->data(), Ci,
             xn->values.data() + bi * Ci * HWi, HWi, 0.0, colsb.data(), HWi);
    // columns live on the *input* grid; scatter them onto the output grid.
    // The geometry is exactly the adjoint of a (K, stride, padding) conv2d
    // whose input is our output, hence col2im over the output image.
    col2im_add(colsb.data(), Co, Ho, Wo, K, stride, padding, H, W,
               y.data() + bi * Co * Ho * Wo);
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t p = 0; p < Ho * Wo; ++p)
        y[(bi * Co + co) * Ho * Wo + p] += b.data()[co];
  }

  return make_op(
      {B, Co, Ho, Wo}, std::move(y), {x, w, b},
      [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        std::vector<double> dcols(COKK * HWi);
        std::vector<double> dwr(pg[1] ? COKK * Ci : 0, 0.0);
        for (std::size_t bi = 0; bi < B; ++bi) {
          // adjoint of col2im is im2col on the upstream gradient
          im2col(g.data() + bi * Co * Ho * Wo, Co, Ho, Wo, K, stride, padding, H, W,
                 dcols.data());
          if (pg[0])
            dgemm_rm(true, false, Ci, HWi, COKK, 1.0, wr->data(), Ci, dcols.data(), HWi,
                     1.0, pg[0]->data() + bi * Ci * HWi, HWi);
          if (pg[1])
            dgemm_rm(false, true, COKK, Ci, HWi, 1.0, dcols.data(), HWi,
                     xn->values.data() + bi * Ci * HWi, HWi, 1.0, dwr.data(), Ci);
          if (pg[2])
            for (std::size_t co = 0; co < Co; ++co)
              for (std::size_t p = 0; p < Ho * Wo; ++p)
                (*pg[2])[co] += g[(bi * Co + co) * Ho * Wo + p];
        }
        if (pg[1])
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t co = 0; co < Co; ++co)
              for (std::size_t k = 0; k < K * K; ++k)
                (*pg[1])[(ci * Co + co) * K * K + k] += dwr[(co * K * K + k) * Ci + ci];
      });
}

Tensor conv2d_depthwise(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_rank4("conv2d_depthwise input", x);
  check_rank4("conv2d_depthwise weight", w);
  const std::size_t B = x.extents()[0], C = x.extents()[1], H = x.extents()[2],
                    W = x.extents()[3];
  if (w.extents() != Extents{C, 1, 3, 3})
    throw ValidationError("conv2d_depthwise: weight must be (" + std::to_string(C) +
                          ",1,3,3), got " + shape_str(w.extents()));
  if (b.extents() != Extents{C})
    throw ValidationError("conv2d_depthwise: bias shape " + shape_str(b.extents()));

  const auto &xv = x.data(), &wv = w.data(), &bv = b.data();
  std::vector<double> y(B * C * H * W);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* xp = xv.data() + bc * H * W;
    const double* wp = wv.data() + (bc % C) * 9;
    const double bias = bv[bc % C];
    double* yp = y.data() + bc * H * W;
    for (std::size_t oy = 0; oy < H; ++oy)
      for (std::size_t ox = 0; ox < W; ++ox) {
        double acc = bias;
        for (int ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) + ky - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) + kx - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            acc += xp[iy * W + ix] * wp[ky * 3 + kx];
          }
        }
        yp[oy * W + ox] = acc;
      }
  }

  auto xn = x.node(), wn = w.node();
  return make_op(
      {B, C, H, W}, std::move(y), {x, w, b},
      [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          const double* gp = g.data() + bc * H * W;
          const double* xp = xn->values.data() + bc * H * W;
          const double* wp = wn->values.data() + (bc % C) * 9;
          for (std::size_t oy = 0; oy < H; ++oy)
            for (std::size_t ox = 0; ox < W; ++ox) {
              const double go = gp[oy * W + ox];
              if (pg[2]) (*pg[2])[bc % C] += go;
              for (int ky = 0; ky < 3; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) + ky - 1;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (int kx = 0; kx < 3; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) + kx - 1;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                  if (pg[0]) (*pg[0])[bc * H * W + iy * W + ix] += go * wp[ky * 3 + kx];
                  if (pg[1])
                    (*pg[1])[(bc % C) * 9 + ky * 3 + kx] += go * xp[iy * W + ix];
                }
              }
            }
        }
      });
}

// ------------------------------------------------------------------ shape ops

Tensor max_pool2(const Tensor& x) {
  check_rank4("max_pool2", x);
  const std::size_t B = x.extents()[0], C = x.extents()[1], H = x.extents()[2],
                    W = x.extents()[3];
  if (H % 2 || W % 2)
    throw ValidationError("max_pool2: spatial extents must be even, got " +
                          shape_str(x.extents()));
  const std::size_t Ho = H / 2, Wo = W / 2;
  const auto& xv = x.data();
  std::vector<double> y(B * C * Ho * Wo);
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size());
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (bc * H + 2 * oy) * W + 2 * ox;
        // fixed scan order makes the tie-break (first in row-major) deterministic
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            std::size_t idx = (bc * H + 2 * oy + dy) * W + 2 * ox + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        y[(bc * Ho + oy) * Wo + ox] = xv[best];
        (*arg)[(bc * Ho + oy) * Wo + ox] = best;
      }
  return make_op({B, C, Ho, Wo}, std::move(y), {x},
                 [arg](const std::vector<double>& g,
                       const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < g.size(); ++i)
                       (*pg[0])[(*arg)[i]] += g[i];
                 });
}

Tensor upsample_nearest2(const Tensor& x) {
  check_rank4("upsample_nearest2", x);
  const std::size_t B = x.extents()[0], C = x.extents()[1], H = x.extents()[2],
                    W = x.extents()[3];
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  const auto& xv = x.data();
  std::vector<double> y(B * C * Ho * Wo);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox)
        y[(bc * Ho + oy) * Wo + ox] = xv[(bc * H + oy / 2) * W + ox / 2];
  return make_op({B, C, Ho, Wo}, std::move(y), {x},
                 [B, C, H, W, Ho, Wo](const std::vector<double>& g,
                                      const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (std::size_t bc = 0; bc < B * C; ++bc)
                     for (std::size_t oy = 0; oy < Ho; ++oy)
                       for (std::size_t ox = 0; ox < Wo; ++ox)
                         (*pg[0])[(bc * H + oy / 2) * W + ox / 2] +=
                             g[(bc * Ho + oy) * Wo + ox];
                 });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_rank4("concat_channels", a);
  check_rank4("concat_channels", b);
  const auto &ea = a.extents(), &eb = b.extents();
  if (ea[0] != eb[0] || ea[2] != eb[2] || ea[3] != eb[3])
    throw ValidationError("concat_channels: batch/spatial mismatch " + shape_str(ea) +
                          " vs " + shape_str(eb));
  const std::size_t B = ea[0], Ca = ea[1], Cb = eb[1], HW = ea[2] * ea[3];
  std::vector<double> y(B * (Ca + Cb) * HW);
  for (std::size_t bi = 0; bi < B; ++bi) {
    std::copy_n(a.data().data() + bi * Ca * HW, Ca * HW,
                y.data() + bi * (Ca + Cb) * HW);
    std::copy_n(b.data().data() + bi * Cb * HW, Cb * HW,
                y.data() + (bi * (Ca + Cb) + Ca) * HW);
  }
  return make_op({B, Ca + Cb, ea[2], ea[3]}, std::move(y), {a, b},
                 [B, Ca, Cb, HW](const std::vector<double>& g,
                                 const std::vector<std::vector<double>*>& pg) {
                   for (std::size_t bi = 0; bi < B; ++bi) {
                     if (pg[0])
                       for (std::size_t i = 0; i < Ca * HW; ++i)
                         (*pg[0])[bi * Ca * HW + i] += g[bi * (Ca + Cb) * HW + i];
                     if (pg[1])
                       for (std::size_t i = 0; i < Cb * HW; ++i)
                         (*pg[1])[bi * Cb * HW + i] += g[(bi * (Ca + Cb) + Ca) * HW + i];
                   }
                 });
}

Tensor reshape(const Tensor& x, Extents extents) {
  if (numel(extents) != x.size())
    throw ValidationError("reshape: cannot view " + shape_str(x.extents()) + " as " +
                          shape_str(extents));
  return make_op(std::move(extents), x.data(), {x},
                 [](const std::vector<double>& g,
                    const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i];
                 });
}

Tensor slice_batch(const Tensor& x, std::size_t index) {
  check_rank4("slice_batch", x);
  const std::size_t B = x.extents()[0], CHW = x.size() / B;
  if (index >= B)
    throw ValidationError("slice_batch: index " + std::to_string(index) + " >= batch " +
                          std::to_string(B));
  std::vector<double> y(x.data().begin() + index * CHW,
                        x.data().begin() + (index + 1) * CHW);
  return make_op({x.extents()[1], x.extents()[2], x.extents()[3]}, std::move(y), {x},
                 [index, CHW](const std::vector<double>& g,
                              const std::vector<std::vector<double>*>& pg) {
                   if (pg[0])
                     for (std::size_t i = 0; i < CHW; ++i)
                       (*pg[0])[index * CHW + i] += g[i];
                 });
}

// -------------------------------------------------------------- network heads

Tensor softmax_over_classes(const Tensor& logits, double tau) {
  check_rank4("softmax_over_classes", logits);
  if (!(tau > 0.0)) throw ValidationError("softmax_over_classes: tau must be positive");
  const std::size_t B = logits.extents()[0], M = logits.extents()[1],
                    HW = logits.extents()[2] * logits.extents()[3];
  const auto& lv = logits.data();
  std::vector<double> z(lv.size());
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t p = 0; p < HW; ++p) {
      const std::size_t base = bi * M * HW + p;
      double mx = lv[base];
      for (std::size_t m = 1; m < M; ++m) mx = std::max(mx, lv[base + m * HW]);
      double denom = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        double e = std::exp((lv[base + m * HW] - mx) / tau);
        z[base + m * HW] = e;
        denom += e;
      }
      for (std::size_t m = 0; m < M; ++m) z[base + m * HW] /= denom;
    }

  auto zshared = std::make_shared<std::vector<double>>(z);
  return make_op(logits.extents(), std::move(z), {logits},
                 [B, M, HW, tau, zshared](const std::vector<double>& g,
                                          const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   const auto& zz = *zshared;
                   for (std::size_t bi = 0; bi < B; ++bi)
                     for (std::size_t p = 0; p < HW; ++p) {
                       const std::size_t base = bi * M * HW + p;
                       double dot = 0.0;
                       for (std::size_t m = 0; m < M; ++m)
                         dot += g[base + m * HW] * zz[base + m * HW];
                       for (std::size_t m = 0; m < M; ++m)
                         (*pg[0])[base + m * HW] +=
                             zz[base + m * HW] * (g[base + m * HW] - dot) / tau;
                     }
                 });
}

Tensor global_avg_pool(const Tensor& x) {
  check_rank4("global_avg_pool", x);
  const std::size_t B = x.extents()[0], C = x.extents()[1],
                    HW = x.extents()[2] * x.extents()[3];
  const auto& xv = x.data();
  std::vector<double> y(B * C, 0.0);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    for (std::size_t p = 0; p < HW; ++p) y[bc] += xv[bc * HW + p];
    y[bc] /= static_cast<double>(HW);
  }
  return make_op({B, C}, std::move(y), {x},
                 [HW](const std::vector<double>& g,
                      const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   for (std::size_t bc = 0; bc < g.size(); ++bc)
                     for (std::size_t p = 0; p < HW; ++p)
                       (*pg[0])[bc * HW + p] += g[bc] / static_cast<double>(HW);
                 });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.extents().size() != 2 || w.extents().size() != 2)
    throw ValidationError("affine: expected (BxC, OxC), got " + shape_str(x.extents()) +
                          " and " + shape_str(w.extents()));
  const std::size_t B = x.extents()[0], C = x.extents()[1], O = w.extents()[0];
  if (w.extents()[1] != C)
    throw ValidationError("affine: weight expects " + std::to_string(w.extents()[1]) +
                          " features, input has " + std::to_string(C));
  if (b.extents() != Extents{O})
    throw ValidationError("affine: bias shape " + shape_str(b.extents()));
  std::vector<double> y(B * O);
  auto xn = x.node(), wn = w.node();
  dgemm_rm(false, true, B, O, C, 1.0, xn->values.data(), C, wn->values.data(), C, 0.0,
           y.data(), O);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t o = 0; o < O; ++o) y[bi * O + o] += b.data()[o];
  return make_op(
      {B, O}, std::move(y), {x, w, b},
      [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        if (pg[0])
          dgemm_rm(false, false, B, C, O, 1.0, g.data(), O, wn->values.data(), C, 1.0,
                   pg[0]->data(), C);
        if (pg[1])
          dgemm_rm(true, false, O, C, B, 1.0, g.data(), O, xn->values.data(), C, 1.0,
                   pg[1]->data(), C);
        if (pg[2])
          for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t o = 0; o < O; ++o) (*pg[2])[o] += g[bi * O + o];
      });
}

Tensor pairwise_row_distance(const Tensor& x) {
  if (x.extents().size() != 2)
    throw ValidationError("pairwise_row_distance: expected CxN, got " +
                          shape_str(x.extents()));
  const std::size_t C = x.extents()[0], N = x.extents()[1];
  const auto& xv = x.data();
  std::vector<double> d(C * C, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = c + 1; k < C; ++k) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        double diff = xv[c * N + n] - xv[k * N + n];
        s += diff * diff;
      }
      d[c * C + k] = d[k * C + c] = std::sqrt(s);
    }
  auto xn = x.node();
  auto dshared = std::make_shared<std::vector<double>>(d);
  return make_op({C, C}, std::move(d), {x},
                 [C, N, xn, dshared](const std::vector<double>& g,
                                     const std::vector<std::vector<double>*>& pg) {
                   if (!pg[0]) return;
                   const auto& xv = xn->values;
                   for (std::size_t c = 0; c < C; ++c)
                     for (std::size_t k = c + 1; k < C; ++k) {
                       const double dist = (*dshared)[c * C + k];
                       if (dist == 0.0) continue;  // kink of sqrt: zero subgradient
                       const double coeff = (g[c * C + k] + g[k * C + c]) / dist;
                       if (coeff == 0.0) continue;
                       for (std::size_t n = 0; n < N; ++n) {
                         const double diff = xv[c * N + n] - xv[k * N + n];
                         (*pg[0])[c * N + n] += coeff * diff;
                         (*pg[0])[k * N + n] -= coeff * diff;
                       }
                     }
                 });
}

Tensor detach(const Tensor& x) { return Tensor::constant(x.extents(), x.data()); }

// ---------------------------------------------------------------- fused losses

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             const std::vector<std::uint8_t>& labeled) {
  check_rank4("softmax_cross_entropy", logits);
  const std::size_t B = logits.extents()[0], M = logits.extents()[1],
                    HW = logits.extents()[2] * logits.extents()[3];
  if (labels.size() != B * HW)
    throw ValidationError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(B * HW) + " pixels");
  if (labeled.size() != B)
    throw ValidationError("softmax_cross_entropy: " + std::to_string(labeled.size()) +
                          " labeled flags for batch " + std::to_string(B));
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= M)
      throw ValidationError("softmax_cross_entropy: label " + std::to_string(l) +
                            " outside [0," + std::to_string(M) + ")");

  std::size_t n_labeled = 0;
  for (auto f : labeled) n_labeled += f ? 1 : 0;

  const auto& lv = logits.data();
  auto z = std::make_shared<std::vector<double>>(n_labeled ? lv.size() : 0);
  double loss = 0.0;
  if (n_labeled) {
    for (std::size_t bi = 0; bi < B; ++bi) {
      if (!labeled[bi]) continue;
      for (std::size_t p = 0; p < HW; ++p) {
        const std::size_t base = bi * M * HW + p;
        double mx = lv[base];
        for (std::size_t m = 1; m < M; ++m) mx = std::max(mx, lv[base + m * HW]);
        double denom = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
          double e = std::exp(lv[base + m * HW] - mx);
          (*z)[base + m * HW] = e;
          denom += e;
        }
        for (std::size_t m = 0; m < M; ++m) (*z)[base + m * HW] /= denom;
        const int y = labels[bi * HW + p];
        loss += mx + std::log(denom) - lv[base + y * HW];
      }
    }
    loss /= static_cast<double>(n_labeled * HW);
  }

  const double denom_all = static_cast<double>(std::max<std::size_t>(n_labeled, 1) * HW);
  auto labeled_copy = std::make_shared<std::vector<std::uint8_t>>(labeled);
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return make_op(
      {1}, {loss}, {logits},
      [=](const std::vector<double>& g, const std::vector<std::vector<double>*>& pg) {
        if (!pg[0] || n_labeled == 0) return;
        const double go = g[0] / denom_all;
        for (std::size_t bi = 0; bi < B; ++bi) {
          if (!(*labeled_copy)[bi]) continue;
          for (std::size_t p = 0; p < HW; ++p) {
            const std::size_t base = bi * M * HW + p;
            const int y = (*labels_copy)[bi * HW + p];
            for (std::size_t m = 0; m < M; ++m)
              (*pg[0])[base + m * HW] +=
                  go * ((*z)[base + m * HW] -
                        (static_cast<std::size_t>(y) == m ? 1.0 : 0.0));
          }
        }
      });
}

Tensor kl_divergence(const Tensor& z_s, const Tensor& z_t) {
  check_rank4("kl_divergence", z_s);
  check_same_shape("kl_divergence", z_s, z_t);
  const std::size_t B = z_s.extents()[0], M = z_s.extents()[1],
                    HW = z_s.extents()[2] * z_s.extents()[3];

  const auto &sv = z_s.data(), &tv = z_t.data();
  for (const auto* vp : {&sv, &tv}) {
    const auto& v = *vp;
    for (std::size_t bi = 0; bi < B; ++bi)
      for (std::size_t p = 0; p < HW; ++p) {
        double s = 0.0;
        for (std::size_t m = 0; m < M; ++m) {
          const double x = v[bi * M * HW + m * HW + p];
          if (x < 0.0)
            throw ValidationError("kl_divergence: negative probability " +
                                  std::to_string(x));
          s += x;
        }
        if (std::abs(s - 1.0) > 1e-6)
          throw ValidationError("kl_divergence: pixel distribution sums to " +
                                std::to_string(s) + " (tolerance 1e-6)");
      }
  }

  double loss = 0.0;
  for (std::size_t i = 0; i < sv.size(); ++i) {
    const double zs = sv[i];
    if (zs <= 0.0) continue;  // 0*log 0 == 0
    loss += zs * std::log(zs / std::max(tv[i], kKlFloor));
  }
  const double norm = static_cast<double>(B * HW);
  loss /= norm;

  auto sn = z_s.node(), tn = z_t.node();
  return make_op(
      {1}, {loss}, {z_s, z_t},
      [sn, tn, norm](const std::vector<double>& g,
                     const std::vector<std::vector<double>*>& pg) {
        const double go = g[0] / norm;
        const auto &sv = sn->values, &tv = tn->values;
        for (std::size_t i = 0; i < sv.size(); ++i) {
          const double zs = sv[i], ztf = std::max(tv[i], kKlFloor);
          if (pg[0] && zs > 0.0) (*pg[0])[i] += go * (std::log(zs / ztf) + 1.0);
          if (pg[1] && tv[i] > kKlFloor) (*pg[1])[i] -= go * zs / ztf;
        }
      });
}

}  // namespace gfkd

// Brute-force re-derivation of the variation graph, written independently of
// the production path in graph_flow.cpp: no mask or distance helpers are
// shared, window membership is tested per pixel instead of materialized, and
// everything is plain loops over plain vectors.  Exists purely as a test
// oracle.

#include <cmath>

#include "gfkd/error.hpp"
#include "gfkd/graph_flow.hpp"

namespace gfkd {

namespace {

// masked value of pixel (y,x) in channel c of map f
double masked_at(const std::vector<double>& f, std::size_t H, std::size_t W,
                 std::size_t c, std::size_t y, std::size_t x,
                 const PatchSpec& patch) {
  const double val = f[(c * H + y) * W + x];
  if (patch.full) return val;

  // argmax of this channel, first winner in row-major order
  std::size_t ay = 0, ax = 0;
  double best = f[c * H * W];
  for (std::size_t yy = 0; yy < H; ++yy)
    for (std::size_t xx = 0; xx < W; ++xx)
      if (f[(c * H + yy) * W + xx] > best) {
        best = f[(c * H + yy) * W + xx];
        ay = yy;
        ax = xx;
      }

  const long r = patch.p / 2;
  const bool inside = std::labs(static_cast<long>(y) - static_cast<long>(ay)) <= r &&
                      std::labs(static_cast<long>(x) - static_cast<long>(ax)) <= r;
  return inside ? val : 0.0;
}

}  // namespace

VariationGraphValues reference_oracle(const std::vector<double>& f_i,
                                      const std::vector<double>& f_i2, std::size_t C,
                                      std::size_t H, std::size_t W,
                                      const PatchSpec& patch) {
  if (f_i.size() != C * H * W || f_i2.size() != C * H * W)
    throw ValidationError("reference_oracle: value count does not match CxHxW");

  VariationGraphValues out;
  out.v.assign(C, 0.0);
  out.e.assign(C * C, 0.0);

  // vertices: squared change of each masked map between the two layers
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double d = masked_at(f_i, H, W, c, y, x, patch) -
                         masked_at(f_i2, H, W, c, y, x, patch);
        out.v[c] += d * d;
      }

  // edges: squared change of pairwise masked-map distances
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < C; ++k) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double d1 = masked_at(f_i, H, W, c, y, x, patch) -
                            masked_at(f_i, H, W, k, y, x, patch);
          const double d2 = masked_at(f_i2, H, W, c, y, x, patch) -
                            masked_at(f_i2, H, W, k, y, x, patch);
          s1 += d1 * d1;
          s2 += d2 * d2;
        }
      const double diff = std::sqrt(s1) - std::sqrt(s2);
      out.e[c * C + k] = diff * diff;
    }
  return out;
}

}  // namespace gfkd

#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "gfkd/params.hpp"

namespace gfkd {

// Segmentation quality metrics over dense label maps.  All maps are row-major
// H*W vectors of class indices; pred and gt must agree in size.

double pixel_accuracy(const std::vector<int>& pred, const std::vector<int>& gt);

// Mean over classes of |intersection|/|union|.  A class absent from both maps
// says nothing about the prediction and is excluded from the mean.
double miou(const std::vector<int>& pred, const std::vector<int>& gt,
            std::size_t num_classes);

// Dice coefficient 2|A∩B|/(|A|+|B|) for one class; both-empty -> 1.0.
double dsc(const std::vector<int>& pred, const std::vector<int>& gt, int cls);

// Symmetric Hausdorff distance (in pixels) between the boundary point sets of
// one class.  A boundary pixel is a foreground pixel with at least one
// non-foreground 4-neighbor, or one sitting on the image edge.  Both sets
// empty -> 0; exactly one empty -> the image diagonal, so a total miss is
// penalized but stays finite and comparable across samples.
double hausdorff(const std::vector<int>& pred, const std::vector<int>& gt,
                 std::size_t h, std::size_t w, int cls);

// Per-sample report plus the mean over a split.
struct MetricReport {
  double acc = 0.0;
  double miou = 0.0;
  std::vector<double> dsc;  // per class
  double dsc_mean = 0.0;
  std::vector<double> hd;   // per class
  double hd_mean = 0.0;
  std::size_t sample_count = 0;
};

MetricReport evaluate_sample(const std::vector<int>& pred, const std::vector<int>& gt,
                             std::size_t h, std::size_t w, std::size_t num_classes);
MetricReport average_reports(const std::vector<MetricReport>& reports);

// Model-size accounting.  FLOPs are counted as 2 x multiply-accumulates of the
// conv / transposed-conv / affine layers; bias adds and activations are
// excluded (the convention is documented in the README).
std::size_t count_params(const ParamStore& store);
std::size_t conv2d_macs(std::size_t c_in, std::size_t c_out, std::size_t k,
                        std::size_t out_h, std::size_t out_w);
std::size_t flops_from_macs(std::size_t macs);

// Wilcoxon signed-rank test on paired samples.  Zero differences are dropped,
// tied magnitudes get average ranks.  Exact null distribution for n <= 20,
// normal approximation with continuity correction (and tie-corrected variance)
// beyond.  All differences zero -> p = 1.0.
double wilcoxon_signed_rank(const std::vector<std::pair<double, double>>& pairs);
// One-sided variant, H1: a > b.
double wilcoxon_signed_rank_greater(const std::vector<std::pair<double, double>>& pairs);

}  // namespace gfkd

#include "gfkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gfkd/error.hpp"

namespace gfkd {

double pixel_accuracy(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw ValidationError("pixel_accuracy: map sizes " + std::to_string(pred.size()) +
                          " vs " + std::to_string(gt.size()));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == gt[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double miou(const std::vector<int>& pred, const std::vector<int>& gt,
            std::size_t num_classes) {
  if (pred.size() != gt.size() || pred.empty())
    throw ValidationError("miou: map sizes " + std::to_string(pred.size()) + " vs " +
                          std::to_string(gt.size()));
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == static_cast<int>(c);
      const bool g = gt[i] == static_cast<int>(c);
      inter += p && g;
      uni += p || g;
    }
    if (uni == 0) continue;  // absent from both maps: no evidence either way
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

double dsc(const std::vector<int>& pred, const std::vector<int>& gt, int cls) {
  if (pred.size() != gt.size() || pred.empty())
    throw ValidationError("dsc: map sizes " + std::to_string(pred.size()) + " vs " +
                          std::to_string(gt.size()));
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls;
    const bool g = gt[i] == cls;
    inter += p && g;
    a += p;
    b += g;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

namespace {

// (y, x) positions of class-`cls` pixels that touch the image edge or a
// non-`cls` 4-neighbor
std::vector<std::pair<int, int>> boundary_pixels(const std::vector<int>& map,
                                                 std::size_t h, std::size_t w,
                                                 int cls) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (map[y * w + x] != cls) continue;
      const bool edge = y == 0 || y == h - 1 || x == 0 || x == w - 1;
      const bool exposed =
          edge || map[(y - 1) * w + x] != cls || map[(y + 1) * w + x] != cls ||
          map[y * w + x - 1] != cls || map[y * w + x + 1] != cls;
      if (exposed) out.emplace_back(static_cast<int>(y), static_cast<int>(x));
    }
  return out;
}

double directed_max_min(const std::vector<std::pair<int, int>>& from,
                        const std::vector<std::pair<int, int>>& to) {
  double worst = 0.0;
  for (const auto& [ay, ax] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [by, bx] : to) {
      const double dy = ay - by, dx = ax - bx;
      best = std::min(best, dy * dy + dx * dx);
    }
    worst = std::max(worst, best);
  }
  return std::sqrt(worst);
}

}  // namespace

double hausdorff(const std::vector<int>& pred, const std::vector<int>& gt,
                 std::size_t h, std::size_t w, int cls) {
  if (pred.size() != gt.size() || pred.size() != h * w || pred.empty())
    throw ValidationError("hausdorff: map sizes disagree with " + std::to_string(h) +
                          "x" + std::to_string(w));
  const auto a = boundary_pixels(pred, h, w, cls);
  const auto b = boundary_pixels(gt, h, w, cls);
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) {
    const double dy = static_cast<double>(h - 1), dx = static_cast<double>(w - 1);
    return std::sqrt(dy * dy + dx * dx);
  }
  return std::max(directed_max_min(a, b), directed_max_min(b, a));
}

MetricReport evaluate_sample(const std::vector<int>& pred, const std::vector<int>& gt,
                             std::size_t h, std::size_t w, std::size_t num_classes) {
  MetricReport r;
  r.acc = pixel_accuracy(pred, gt);
  r.miou = miou(pred, gt, num_classes);
  r.dsc.resize(num_classes);
  r.hd.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    r.dsc[c] = dsc(pred, gt, static_cast<int>(c));
    r.hd[c] = hausdorff(pred, gt, h, w, static_cast<int>(c));
  }
  r.dsc_mean = std::accumulate(r.dsc.begin(), r.dsc.end(), 0.0) /
               static_cast<double>(num_classes);
  r.hd_mean = std::accumulate(r.hd.begin(), r.hd.end(), 0.0) /
              static_cast<double>(num_classes);
  r.sample_count = 1;
  return r;
}

MetricReport average_reports(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ValidationError("average_reports: empty report list");
  MetricReport avg;
  avg.dsc.assign(reports.front().dsc.size(), 0.0);
  avg.hd.assign(reports.front().hd.size(), 0.0);
  for (const auto& r : reports) {
    if (r.dsc.size() != avg.dsc.size())
      throw ValidationError("average_reports: class counts disagree");
    avg.acc += r.acc;
    avg.miou += r.miou;
    avg.dsc_mean += r.dsc_mean;
    avg.hd_mean += r.hd_mean;
    for (std::size_t c = 0; c < avg.dsc.size(); ++c) {
      avg.dsc[c] += r.dsc[c];
      avg.hd[c] += r.hd[c];
    }
    avg.sample_count += r.sample_count;
  }
  const double n = static_cast<double>(reports.size());
  avg.acc /= n;
  avg.miou /= n;
  avg.dsc_mean /= n;
  avg.hd_mean /= n;
  for (std::size_t c = 0; c < avg.dsc.size(); ++c) {
    avg.dsc[c] /= n;
    avg.hd[c] /= n;
  }
  return avg;
}

std::size_t count_params(const ParamStore& store) { return store.total_values(); }

std::size_t conv2d_macs(std::size_t c_in, std::size_t c_out, std::size_t k,
                        std::size_t out_h, std::size_t out_w) {
  return c_out * out_h * out_w * c_in * k * k;
}

std::size_t flops_from_macs(std::size_t macs) { return 2 * macs; }

namespace {

struct RankedDiffs {
  std::vector<double> ranks;  // average ranks of |d|, aligned with signs
  std::vector<int> signs;
  double w_plus = 0.0;
  double tie_term = 0.0;  // sum over tie groups of (t^3 - t)
};

RankedDiffs rank_differences(const std::vector<std::pair<double, double>>& pairs) {
  std::vector<double> diffs;
  for (const auto& [a, b] : pairs)
    if (a != b) diffs.push_back(a - b);

  RankedDiffs rd;
  const std::size_t n = diffs.size();
  if (n == 0) return rd;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return std::abs(diffs[i]) < std::abs(diffs[j]);
  });

  rd.ranks.resize(n);
  rd.signs.resize(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const double t = static_cast<double>(j - i);
    rd.tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k) rd.ranks[order[k]] = avg;
    i = j;
  }
  for (std::size_t k = 0; k < n; ++k) {
    rd.signs[k] = diffs[k] > 0 ? 1 : -1;
    if (rd.signs[k] > 0) rd.w_plus += rd.ranks[k];
  }
  return rd;
}

// Exact null distribution of W+ for n <= 20, counting over all 2^n sign
// assignments.  Average ranks are half-integers, so everything is carried in
// doubled units to stay integral.
struct ExactTail {
  double p_le = 1.0;
  double p_ge = 1.0;
};

ExactTail exact_tails(const RankedDiffs& rd) {
  const std::size_t n = rd.ranks.size();
  std::vector<long long> r2(n);
  long long total2 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    r2[k] = std::llround(2.0 * rd.ranks[k]);
    total2 += r2[k];
  }
  std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
  counts[0] = 1.0;
  for (std::size_t k = 0; k < n; ++k)
    for (long long s = total2; s >= r2[k]; --s)
      counts[static_cast<std::size_t>(s)] +=
          counts[static_cast<std::size_t>(s - r2[k])];

  const long long w2 = std::llround(2.0 * rd.w_plus);
  const double denom = std::ldexp(1.0, static_cast<int>(n));  // 2^n assignments
  double le = 0.0, ge = 0.0;
  for (long long s = 0; s <= total2; ++s) {
    if (s <= w2) le += counts[static_cast<std::size_t>(s)];
    if (s >= w2) ge += counts[static_cast<std::size_t>(s)];
  }
  return {le / denom, ge / denom};
}

double phi_upper(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

double wilcoxon_signed_rank(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw ValidationError("wilcoxon: need at least one pair");
  const auto rd = rank_differences(pairs);
  const std::size_t n = rd.ranks.size();
  if (n == 0) return 1.0;
  if (n <= 20) {
    const auto t = exact_tails(rd);
    return std::min(1.0, 2.0 * std::min(t.p_le, t.p_ge));
  }
  const double dn = static_cast<double>(n);
  const double mean = dn * (dn + 1.0) / 4.0;
  const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - rd.tie_term / 48.0;
  if (var <= 0.0) return 1.0;
  const double z = std::max(0.0, std::abs(rd.w_plus - mean) - 0.5) / std::sqrt(var);
  return std::min(1.0, 2.0 * phi_upper(z));
}

double wilcoxon_signed_rank_greater(
    const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw ValidationError("wilcoxon: need at least one pair");
  const auto rd = rank_differences(pairs);
  const std::size_t n = rd.ranks.size();
  if (n == 0) return 1.0;
  if (n <= 20) return exact_tails(rd).p_ge;
  const double dn = static_cast<double>(n);
  const double mean = dn * (dn + 1.0) / 4.0;
  const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - rd.tie_term / 48.0;
  if (var <= 0.0) return 1.0;
  const double z = (rd.w_plus - mean - 0.5) / std::sqrt(var);
  return std::min(1.0, phi_upper(z));
}

}  // namespace gfkd

#include "gfkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gfkd/error.hpp"

namespace gfkd {
namespace {

// Validation ids start here so the two splits can never collide.
constexpr std::int64_t kValIdBase = 1'000'000;

// Per-class intensity bands.  Neighbors overlap by ~0.1 so that raw intensity
// alone leaves boundary pixels ambiguous under noise.
constexpr double kBgLo = 0.10, kBgHi = 0.40;
constexpr double kDiskLo = 0.30, kDiskHi = 0.60;
constexpr double kRectLo = 0.50, kRectHi = 0.80;
constexpr double kRingLo = 0.70, kRingHi = 1.00;

Sample make_sample(std::int64_t id, std::size_t size, double noise_sigma, Rng rng) {
  Sample s;
  s.id = id;
  s.size = size;
  s.image.assign(size * size, 0.0);
  s.label.assign(size * size, 0);

  const double n = static_cast<double>(size);
  auto paint = [&](std::size_t y, std::size_t x, double v, int cls) {
    s.image[y * size + x] = v;
    s.label[y * size + x] = cls;
  };

  // background
  const double bg = rng.uniform(kBgLo, kBgHi);
  std::fill(s.image.begin(), s.image.end(), bg);

  // disk (class 1)
  {
    const double r = rng.uniform(n / 8.0, n / 4.0);
    const double cy = rng.uniform(r, n - r);
    const double cx = rng.uniform(r, n - r);
    const double v = rng.uniform(kDiskLo, kDiskHi);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        if (dy * dy + dx * dx <= r * r) paint(y, x, v, 1);
      }
  }

  // rectangle (class 2), overwrites the disk where they overlap
  {
    const double h = rng.uniform(n / 6.0, n / 3.0);
    const double w = rng.uniform(n / 6.0, n / 3.0);
    const double y0 = rng.uniform(0.0, n - h);
    const double x0 = rng.uniform(0.0, n - w);
    const double v = rng.uniform(kRectLo, kRectHi);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        if (y + 0.5 >= y0 && y + 0.5 <= y0 + h && x + 0.5 >= x0 && x + 0.5 <= x0 + w)
          paint(y, x, v, 2);
  }

  // thin annulus (class 3), drawn last so the small structure always survives
  {
    const double ro = rng.uniform(n / 6.0, n / 3.5);
    const double ri = ro - 1.6;  // ~1-2 px wall at any radius
    const double cy = rng.uniform(ro, n - ro);
    const double cx = rng.uniform(ro, n - ro);
    const double v = rng.uniform(kRingLo, kRingHi);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const double d2 = dy * dy + dx * dx;
        if (d2 <= ro * ro && d2 >= ri * ri) paint(y, x, v, 3);
      }
  }

  for (double& v : s.image)
    v = std::clamp(v + noise_sigma * rng.gaussian(), 0.0, 1.0);
  return s;
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.image_size == 0 || spec.image_size % 4 != 0)
    throw ValidationError("generate_dataset: image_size " +
                          std::to_string(spec.image_size) +
                          " must be a positive multiple of 4 (two pooling stages)");
  if (spec.num_classes != 4)
    throw ValidationError("generate_dataset: the procedural scene has exactly 4 "
                          "classes, got num_classes=" +
                          std::to_string(spec.num_classes));
  if (spec.labeled_fraction < 0.0 || spec.labeled_fraction > 1.0)
    throw ValidationError("generate_dataset: labeled_fraction must be in [0,1]");

  const Rng root(spec.seed);
  Dataset ds;
  ds.train.reserve(spec.n_train);
  ds.val.reserve(spec.n_val);
  for (std::size_t i = 0; i < spec.n_train; ++i) {
    const auto id = static_cast<std::int64_t>(i);
    ds.train.push_back(make_sample(id, spec.image_size, spec.noise_sigma,
                                   root.child(static_cast<std::uint64_t>(id))));
  }
  for (std::size_t i = 0; i < spec.n_val; ++i) {
    const auto id = kValIdBase + static_cast<std::int64_t>(i);
    ds.val.push_back(make_sample(id, spec.image_size, spec.noise_sigma,
                                 root.child(static_cast<std::uint64_t>(id))));
  }
  return ds;
}

std::vector<std::uint8_t> partition_labels(std::size_t n_train, double fraction,
                                           std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0)
    throw ValidationError("partition_labels: fraction must be in [0,1]");
  const auto k = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(n_train)));
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::uint8_t> labeled(n_train, 0);
  for (std::size_t i = 0; i < k; ++i) labeled[order[i]] = 1;
  return labeled;
}

Sample augment(const Sample& sample, Rng& rng) {
  const auto kind = rng.below(6);
  if (kind == 0) return sample;

  const std::size_t n = sample.size;
  auto src = [&](std::size_t y, std::size_t x) -> std::pair<std::size_t, std::size_t> {
    switch (kind) {
      case 1: return {y, n - 1 - x};          // h-flip
      case 2: return {n - 1 - y, x};          // v-flip
      case 3: return {x, n - 1 - y};          // rot90
      case 4: return {n - 1 - y, n - 1 - x};  // rot180
      default: return {n - 1 - x, y};         // rot270
    }
  };

  Sample out;
  out.id = sample.id;
  out.size = n;
  out.image.resize(n * n);
  out.label.resize(n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const auto [sy, sx] = src(y, x);
      out.image[y * n + x] = sample.image[sy * n + sx];
      out.label[y * n + x] = sample.label[sy * n + sx];
    }
  return out;
}

std::vector<ParamStore::Entry> split_entries(const std::vector<Sample>& samples) {
  std::vector<ParamStore::Entry> out;
  out.reserve(samples.size() * 2);
  for (const auto& s : samples) {
    const std::string stem = std::to_string(s.id);
    out.push_back({stem + ".image", {1, s.size, s.size}, s.image});
    std::vector<double> lab(s.label.begin(), s.label.end());
    out.push_back({stem + ".label", {s.size, s.size}, std::move(lab)});
  }
  return out;
}

std::vector<Sample> split_from_entries(const std::vector<ParamStore::Entry>& entries,
                                       std::size_t num_classes) {
  if (entries.size() % 2 != 0)
    throw ValidationError("split_from_entries: odd entry count, expected "
                          "image/label pairs");
  std::vector<Sample> out;
  out.reserve(entries.size() / 2);
  for (std::size_t i = 0; i + 1 < entries.size(); i += 2) {
    const auto& img = entries[i];
    const auto& lab = entries[i + 1];
    const std::string stem = img.name.substr(0, img.name.find('.'));
    if (img.name != stem + ".image" || lab.name != stem + ".label")
      throw ValidationError("split_from_entries: entries " + img.name + " / " +
                            lab.name + " do not form an image/label pair");
    if (img.extents.size() != 3 || img.extents[0] != 1 ||
        img.extents[1] != img.extents[2])
      throw ValidationError("split_from_entries: " + img.name +
                            " has shape " + shape_str(img.extents) +
                            ", expected 1 x S x S");
    Sample s;
    s.id = std::stoll(stem);
    s.size = img.extents[1];
    s.image = img.values;
    s.label.resize(lab.values.size());
    for (std::size_t j = 0; j < lab.values.size(); ++j) {
      const double v = lab.values[j];
      const int c = static_cast<int>(std::llround(v));
      if (v != static_cast<double>(c) || c < 0 ||
          static_cast<std::size_t>(c) >= num_classes)
        throw ValidationError("split_from_entries: " + lab.name +
                              " holds a non-class value " + std::to_string(v));
      s.label[j] = c;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gfkd

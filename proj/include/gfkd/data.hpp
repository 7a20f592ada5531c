#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfkd/params.hpp"
#include "gfkd/rng.hpp"

namespace gfkd {

// One segmentation sample: a single-channel image in [0,1] and a dense class
// map over the same grid.  Images are square.
struct Sample {
  std::int64_t id = 0;
  std::size_t size = 0;                // H == W
  std::vector<double> image;           // size*size, row-major
  std::vector<int> label;              // size*size, class indices
};

struct DatasetSpec {
  std::uint64_t seed = 7;
  std::size_t n_train = 512;
  std::size_t n_val = 128;
  std::size_t image_size = 32;
  std::size_t num_classes = 4;         // background, disk, rectangle, annulus
  double noise_sigma = 0.08;
  double labeled_fraction = 1.0;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

// Procedural scenes: a filled disk, a filled axis-aligned rectangle, and a
// deliberately thin annulus over a flat background, with randomized geometry
// and per-shape intensity.  Shapes are drawn in that fixed order and each
// overwrites whatever lies under it, so the label map is unambiguous.
// Intensity bands of neighboring classes overlap on purpose — a per-pixel
// threshold cannot solve the task, spatial context is required.
// Noise is Gaussian, then the image is clamped back into [0,1].
//
// Every sample owns an RNG stream derived from (spec.seed, sample id), so
// generation is order-independent and could run in parallel across ids.
// Validation ids live in a disjoint range from training ids.
Dataset generate_dataset(const DatasetSpec& spec);

// Flags exactly floor(fraction * n) samples as labeled, chosen by a seeded
// shuffle of the index range.  The flag vector is what gets persisted, so
// every experiment arm sees the identical split.
std::vector<std::uint8_t> partition_labels(std::size_t n_train, double fraction,
                                           std::uint64_t seed);

// One of {identity, h-flip, v-flip, rot90, rot180, rot270}, uniform; the same
// transform is applied to image and label.
Sample augment(const Sample& sample, Rng& rng);

// Dataset dump reuses the checkpoint entry framing: per sample one "<id>.image"
// entry (1 x S x S) and one "<id>.label" entry (S x S, class indices stored as
// doubles).  load_split() is the exact inverse.
std::vector<ParamStore::Entry> split_entries(const std::vector<Sample>& samples);
std::vector<Sample> split_from_entries(const std::vector<ParamStore::Entry>& entries,
                                       std::size_t num_classes);

}  // namespace gfkd

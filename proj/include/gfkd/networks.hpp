#pragma once

#include <cstdint>

#include "gfkd/params.hpp"
#include "gfkd/tensor.hpp"

namespace gfkd {

// Depth-3 encoder/decoder segmentation net with skip concatenation.  Teacher
// and student are the same shape at different widths.  Stages are
// depthwise-separable (3x3 depthwise + 1x1 pointwise) except the stem, which
// keeps a dense 3x3 on the thin image input.  The stage-2 encoder and stage-2
// decoder outputs are the feature tap pair: both are 2*width x H/2 x W/2.
struct UNetOutput {
  Tensor logits;  // B x num_classes x H x W
  Tensor enc2;    // B x 2*width x H/2 x W/2
  Tensor dec2;    // same shape as enc2
};

class MiniUNet {
 public:
  MiniUNet(std::size_t width, std::size_t in_channels, std::size_t num_classes,
           std::uint64_t seed);

  UNetOutput forward(const ParamTensors& pt, const Tensor& x) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t width() const { return width_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t tap_channels() const { return 2 * width_; }

  // multiply-accumulates of one sample's forward pass (conv layers only)
  std::size_t count_macs(std::size_t h, std::size_t w) const;

 private:
  std::size_t width_, in_channels_, num_classes_;
  ParamStore params_;
};

// Feature compressor: three 3x3 stride-1 pad-1 convolutions walking the
// channel path c_t -> round((c_t+c_s)/2) -> c_s -> c_s, leaky-ReLU after each;
// the decoder mirrors them with transposed convolutions back to c_t.
class Paraphraser {
 public:
  Paraphraser(std::size_t c_t, std::size_t c_s, std::uint64_t seed);

  Tensor paraphrase(const ParamTensors& pt, const Tensor& f) const;   // encoder only
  Tensor reconstruct(const ParamTensors& pt, const Tensor& f) const;  // encoder+decoder

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t c_t() const { return c_t_; }
  std::size_t c_s() const { return c_s_; }
  std::size_t c_mid() const { return c_mid_; }
  std::size_t count_macs(std::size_t h, std::size_t w) const;

 private:
  std::size_t c_t_, c_s_, c_mid_;
  ParamStore params_;
};

// Wasserstein critic: four stride-2 3x3 convolutions (16,32,64,64 wide) with
// leaky-ReLU, global average pooling, and an affine map to one unconstrained
// real per sample.  No sigmoid.
class Discriminator {
 public:
  Discriminator(std::size_t in_channels, std::uint64_t seed);

  // y: per-pixel class probabilities, x: the input image; both BxCxHxW with
  // matching batch and spatial extents.  Returns scores of shape (B).
  Tensor discriminate(const ParamTensors& pt, const Tensor& y, const Tensor& x) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t count_macs(std::size_t h, std::size_t w) const;

 private:
  std::size_t in_channels_;
  ParamStore params_;
};

// clamp every parameter to [-clip, clip] (the critic's Lipschitz leash)
void clip_params(ParamStore& store, double clip);

}  // namespace gfkd

#include "gfkd/networks.hpp"

#include <algorithm>
#include <cmath>

#include "gfkd/error.hpp"
#include "gfkd/ops.hpp"

namespace gfkd {

namespace {

// registers weight+bias of a dense conv (O x C x K x K)
void add_conv(ParamStore& ps, const std::string& name, std::size_t o, std::size_t c,
              std::size_t k, Rng& rng) {
  const std::size_t fan_in = c * k * k;
  ps.add_uniform(name + ".w", {o, c, k, k}, fan_in, rng);
  ps.add_uniform(name + ".b", {o}, fan_in, rng);
}

// registers a depthwise 3x3 (C x 1 x 3 x 3)
void add_dwconv(ParamStore& ps, const std::string& name, std::size_t c, Rng& rng) {
  ps.add_uniform(name + ".w", {c, 1, 3, 3}, 9, rng);
  ps.add_uniform(name + ".b", {c}, 9, rng);
}

// registers a transposed conv (C_in x C_out x K x K)
void add_tconv(ParamStore& ps, const std::string& name, std::size_t ci, std::size_t co,
               std::size_t k, Rng& rng) {
  const std::size_t fan_in = ci * k * k;
  ps.add_uniform(name + ".w", {ci, co, k, k}, fan_in, rng);
  ps.add_uniform(name + ".b", {co}, fan_in, rng);
}

// depthwise 3x3 + pointwise 1x1, ReLU after each
Tensor separable_stage(const ParamTensors& pt, const std::string& name, const Tensor& x) {
  Tensor h = relu(conv2d_depthwise(x, pt[name + ".dw.w"], pt[name + ".dw.b"]));
  return relu(conv2d(h, pt[name + ".pw.w"], pt[name + ".pw.b"], 1, 0));
}

std::size_t sep_macs(std::size_t c_in, std::size_t c_out, std::size_t hw) {
  return c_in * 9 * hw + c_out * c_in * hw;
}

}  // namespace

// ------------------------------------------------------------------ MiniUNet

MiniUNet::MiniUNet(std::size_t width, std::size_t in_channels, std::size_t num_classes,
                   std::uint64_t seed)
    : width_(width), in_channels_(in_channels), num_classes_(num_classes) {
  if (width < 2)
    throw ValidationError("mini_unet: width must be >= 2, got " + std::to_string(width));
  if (num_classes < 2)
    throw ValidationError("mini_unet: need at least 2 classes, got " +
                          std::to_string(num_classes));
  Rng rng(seed);
  const std::size_t w1 = width, w2 = 2 * width, w4 = 4 * width;
  add_conv(params_, "enc1", w1, in_channels, 3, rng);
  add_dwconv(params_, "enc2.dw", w1, rng);
  add_conv(params_, "enc2.pw", w2, w1, 1, rng);
  add_dwconv(params_, "bott.dw", w2, rng);
  add_conv(params_, "bott.pw", w4, w2, 1, rng);
  add_conv(params_, "up2", w2, w4, 1, rng);
  add_dwconv(params_, "dec2.dw", w4, rng);
  add_conv(params_, "dec2.pw", w2, w4, 1, rng);
  add_conv(params_, "up1", w1, w2, 1, rng);
  add_dwconv(params_, "dec1.dw", w2, rng);
  add_conv(params_, "dec1.pw", w1, w2, 1, rng);
  add_conv(params_, "head", num_classes, w1, 1, rng);
}

UNetOutput MiniUNet::forward(const ParamTensors& pt, const Tensor& x) const {
  if (x.extents().size() != 4 || x.extents()[1] != in_channels_)
    throw ValidationError("mini_unet: input must be Bx" + std::to_string(in_channels_) +
                          "xHxW, got " + shape_str(x.extents()));
  if (x.extents()[2] % 4 || x.extents()[3] % 4)
    throw ValidationError("mini_unet: spatial extents must be divisible by 4, got " +
                          shape_str(x.extents()));

  Tensor e1 = relu(conv2d(x, pt["enc1.w"], pt["enc1.b"], 1, 1));
  Tensor e2 = separable_stage(pt, "enc2", max_pool2(e1));
  Tensor bt = separable_stage(pt, "bott", max_pool2(e2));
  Tensor u2 = upsample_nearest2(conv2d(bt, pt["up2.w"], pt["up2.b"], 1, 0));
  Tensor d2 = separable_stage(pt, "dec2", concat_channels(u2, e2));
  Tensor u1 = upsample_nearest2(conv2d(d2, pt["up1.w"], pt["up1.b"], 1, 0));
  Tensor d1 = separable_stage(pt, "dec1", concat_channels(u1, e1));
  Tensor logits = conv2d(d1, pt["head.w"], pt["head.b"], 1, 0);
  return UNetOutput{std::move(logits), std::move(e2), std::move(d2)};
}

std::size_t MiniUNet::count_macs(std::size_t h, std::size_t w) const {
  const std::size_t w1 = width_, w2 = 2 * width_, w4 = 4 * width_;
  const std::size_t hw = h * w, hw2 = hw / 4, hw4 = hw / 16;
  std::size_t macs = 0;
  macs += w1 * in_channels_ * 9 * hw;  // stem
  macs += sep_macs(w1, w2, hw2);       // enc2
  macs += sep_macs(w2, w4, hw4);       // bottleneck
  macs += w2 * w4 * hw4;               // up2 projection
  macs += sep_macs(w4, w2, hw2);       // dec2
  macs += w1 * w2 * hw2;               // up1 projection
  macs += sep_macs(w2, w1, hw);        // dec1
  macs += num_classes_ * w1 * hw;      // head
  return macs;
}

// --------------------------------------------------------------- Paraphraser

Paraphraser::Paraphraser(std::size_t c_t, std::size_t c_s, std::uint64_t seed)
    : c_t_(c_t), c_s_(c_s) {
  if (c_s < 1 || c_t < c_s)
    throw ValidationError("paraphraser: need c_t >= c_s >= 1, got c_t=" +
                          std::to_string(c_t) + " c_s=" + std::to_string(c_s) +
                          " (it compresses, never expands)");
  c_mid_ = static_cast<std::size_t>(std::llround((c_t + c_s) / 2.0));
  Rng rng(seed);
  add_conv(params_, "enc1", c_mid_, c_t_, 3, rng);
  add_conv(params_, "enc2", c_s_, c_mid_, 3, rng);
  add_conv(params_, "enc3", c_s_, c_s_, 3, rng);
  add_tconv(params_, "dec1", c_s_, c_s_, 3, rng);
  add_tconv(params_, "dec2", c_s_, c_mid_, 3, rng);
  add_tconv(params_, "dec3", c_mid_, c_t_, 3, rng);
}

Tensor Paraphraser::paraphrase(const ParamTensors& pt, const Tensor& f) const {
  if (f.extents().size() != 4 || f.extents()[1] != c_t_)
    throw ValidationError("paraphraser: input must be Bx" + std::to_string(c_t_) +
                          "xHxW, got " + shape_str(f.extents()));
  Tensor h = leaky_relu(conv2d(f, pt["enc1.w"], pt["enc1.b"], 1, 1));
  h = leaky_relu(conv2d(h, pt["enc2.w"], pt["enc2.b"], 1, 1));
  return leaky_relu(conv2d(h, pt["enc3.w"], pt["enc3.b"], 1, 1));
}

Tensor Paraphraser::reconstruct(const ParamTensors& pt, const Tensor& f) const {
  Tensor h = paraphrase(pt, f);
  h = leaky_relu(conv2d_transposed(h, pt["dec1.w"], pt["dec1.b"], 1, 1));
  h = leaky_relu(conv2d_transposed(h, pt["dec2.w"], pt["dec2.b"], 1, 1));
  return leaky_relu(conv2d_transposed(h, pt["dec3.w"], pt["dec3.b"], 1, 1));
}

std::size_t Paraphraser::count_macs(std::size_t h, std::size_t w) const {
  const std::size_t hw = h * w;
  std::size_t macs = 0;
  macs += c_mid_ * c_t_ * 9 * hw + c_s_ * c_mid_ * 9 * hw + c_s_ * c_s_ * 9 * hw;
  macs += c_s_ * c_s_ * 9 * hw + c_mid_ * c_s_ * 9 * hw + c_t_ * c_mid_ * 9 * hw;
  return macs;
}

// ------------------------------------------------------------- Discriminator

namespace {
constexpr std::size_t kCriticWidths[4] = {16, 32, 64, 64};
}

Discriminator::Discriminator(std::size_t in_channels, std::uint64_t seed)
    : in_channels_(in_channels) {
  if (in_channels < 1) throw ValidationError("discriminator: no input channels");
  Rng rng(seed);
  std::size_t c = in_channels;
  for (int i = 0; i < 4; ++i) {
    add_conv(params_, "conv" + std::to_string(i + 1), kCriticWidths[i], c, 3, rng);
    c = kCriticWidths[i];
  }
  const std::size_t fan_in = kCriticWidths[3];
  params_.add_uniform("out.w", {1, fan_in}, fan_in, rng);
  params_.add_uniform("out.b", {1}, fan_in, rng);
}

Tensor Discriminator::discriminate(const ParamTensors& pt, const Tensor& y,
                                   const Tensor& x) const {
  if (y.extents().size() != 4 || x.extents().size() != 4)
    throw ValidationError("discriminator: expected BxCxHxW inputs");
  if (y.extents()[0] != x.extents()[0] || y.extents()[2] != x.extents()[2] ||
      y.extents()[3] != x.extents()[3])
    throw ValidationError("discriminator: prediction " + shape_str(y.extents()) +
                          " and image " + shape_str(x.extents()) +
                          " must share batch and spatial extents");
  if (y.extents()[1] + x.extents()[1] != in_channels_)
    throw ValidationError("discriminator: built for " + std::to_string(in_channels_) +
                          " channels, got " +
                          std::to_string(y.extents()[1] + x.extents()[1]));

  Tensor h = concat_channels(y, x);
  for (int i = 1; i <= 4; ++i) {
    const std::string name = "conv" + std::to_string(i);
    h = leaky_relu(conv2d(h, pt[name + ".w"], pt[name + ".b"], 2, 1));
  }
  Tensor pooled = global_avg_pool(h);                      // B x 64
  Tensor score = affine(pooled, pt["out.w"], pt["out.b"]);  // B x 1
  return reshape(score, {score.extents()[0]});
}

std::size_t Discriminator::count_macs(std::size_t h, std::size_t w) const {
  std::size_t macs = 0, c = in_channels_;
  for (int i = 0; i < 4; ++i) {
    h = (h + 2 - 3) / 2 + 1;
    w = (w + 2 - 3) / 2 + 1;
    macs += kCriticWidths[i] * c * 9 * h * w;
    c = kCriticWidths[i];
  }
  macs += kCriticWidths[3];  // affine
  return macs;
}

void clip_params(ParamStore& store, double clip) {
  for (auto& e : store.entries())
    for (double& v : e.values) v = std::clamp(v, -clip, clip);
}

}  // namespace gfkd

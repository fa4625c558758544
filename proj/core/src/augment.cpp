#include "teddy/augment.hpp"

#include "teddy/error.hpp"
#include "teddy/rng.hpp"

namespace teddy {

AugmentMode parse_augment_mode(const std::string& s) {
  if (s == "none") return AugmentMode::none;
  if (s == "flip") return AugmentMode::flip;
  if (s == "dsa-basic") return AugmentMode::dsa_basic;
  fail(ErrorCode::unknown_mode, "augment mode must be none, flip, or dsa-basic; got " + s);
}

std::string augment_mode_name(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::none: return "none";
    case AugmentMode::flip: return "flip";
    case AugmentMode::dsa_basic: return "dsa-basic";
  }
  return "?";
}

AugmentPlan make_augment_plan(AugmentMode mode, std::uint64_t seed, Index batch, Index channels) {
  AugmentPlan plan;
  plan.mode = mode;
  plan.per_image.resize(static_cast<std::size_t>(batch));
  if (mode == AugmentMode::none) return plan;

  Rng rng = make_rng(derive_seed(seed, "augment:" + augment_mode_name(mode)));
  for (auto& a : plan.per_image) {
    if (mode == AugmentMode::flip) {
      a.flip = true;
      continue;
    }
    // dsa-basic: random flip, shift within +-4 px, per-channel color jitter.
    a.flip = uniform(rng) < 0.5;
    a.shift_x = static_cast<Index>(uniform_index(rng, 9)) - 4;
    a.shift_y = static_cast<Index>(uniform_index(rng, 9)) - 4;
    a.channel_scale.resize(static_cast<std::size_t>(channels));
    for (double& s : a.channel_scale) s = uniform(rng, 0.8, 1.2);
    a.brightness = uniform(rng, -0.1, 0.1);
  }
  return plan;
}

Tensor apply_augment(const Tensor& images, const AugmentPlan& plan) {
  require(images.rank() == 4, ErrorCode::shape_mismatch, "augment expects [B,C,H,W]");
  require(static_cast<Index>(plan.per_image.size()) == images.shape[0], ErrorCode::shape_mismatch,
          "augment plan batch size does not match images");
  if (plan.mode == AugmentMode::none) return images;

  const Index B = images.shape[0], C = images.shape[1], H = images.shape[2], W = images.shape[3];
  Tensor out(images.shape);
  for (Index b = 0; b < B; ++b) {
    const ImageAugment& a = plan.per_image[static_cast<std::size_t>(b)];
    for (Index c = 0; c < C; ++c) {
      const double scale = a.channel_scale.empty() ? 1.0 : a.channel_scale[static_cast<std::size_t>(c)];
      for (Index y = 0; y < H; ++y) {
        for (Index x = 0; x < W; ++x) {
          Index sy = y - a.shift_y;
          Index sx = x - a.shift_x;
          double v = 0.0;
          if (sy >= 0 && sy < H && sx >= 0 && sx < W) {
            Index src_x = a.flip ? W - 1 - sx : sx;
            v = images.at4(b, c, sy, src_x);
          }
          out.at4(b, c, y, x) = scale * v + a.brightness;
        }
      }
    }
  }
  return out;
}

Tensor backprop_augment(const Tensor& grad_augmented, const AugmentPlan& plan) {
  if (plan.mode == AugmentMode::none) return grad_augmented;
  const Index B = grad_augmented.shape[0], C = grad_augmented.shape[1];
  const Index H = grad_augmented.shape[2], W = grad_augmented.shape[3];
  Tensor grad(grad_augmented.shape);
  for (Index b = 0; b < B; ++b) {
    const ImageAugment& a = plan.per_image[static_cast<std::size_t>(b)];
    for (Index c = 0; c < C; ++c) {
      const double scale = a.channel_scale.empty() ? 1.0 : a.channel_scale[static_cast<std::size_t>(c)];
      for (Index y = 0; y < H; ++y) {
        for (Index x = 0; x < W; ++x) {
          Index sy = y - a.shift_y;
          Index sx = x - a.shift_x;
          if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
          Index src_x = a.flip ? W - 1 - sx : sx;
          grad.at4(b, c, sy, src_x) += scale * grad_augmented.at4(b, c, y, x);
        }
      }
    }
  }
  return grad;
}

Tensor augment_batch(const Tensor& images, AugmentMode mode, std::uint64_t seed) {
  return apply_augment(images, make_augment_plan(mode, seed, images.shape[0], images.shape[1]));
}

}  // namespace teddy

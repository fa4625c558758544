#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "teddy/tensor.hpp"

namespace teddy {

// Differentiable image augmentations. Every mode is a per-image composition
// of linear operators (flip, integer shift with zero pad, per-channel affine
// color jitter), so gradients map back exactly through backprop_augment.
enum class AugmentMode { none, flip, dsa_basic };

AugmentMode parse_augment_mode(const std::string& s);
std::string augment_mode_name(AugmentMode mode);

struct ImageAugment {
  bool flip = false;
  Index shift_x = 0;
  Index shift_y = 0;
  std::vector<double> channel_scale;  // empty = identity
  double brightness = 0.0;
};

struct AugmentPlan {
  AugmentMode mode = AugmentMode::none;
  std::vector<ImageAugment> per_image;
};

AugmentPlan make_augment_plan(AugmentMode mode, std::uint64_t seed, Index batch, Index channels);

Tensor apply_augment(const Tensor& images, const AugmentPlan& plan);

// Adjoint of apply_augment: maps d loss / d augmented back to d loss / d input.
Tensor backprop_augment(const Tensor& grad_augmented, const AugmentPlan& plan);

// Seed-deterministic one-shot form.
Tensor augment_batch(const Tensor& images, AugmentMode mode, std::uint64_t seed);

}  // namespace teddy

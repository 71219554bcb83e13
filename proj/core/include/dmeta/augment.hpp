#pragma once

#include "dmeta/rng.hpp"
#include "dmeta/tensor.hpp"

namespace dmeta {

/// One draw of the low-augmentation pipeline: horizontal flip, hue shift
/// in [-0.08, 0.08], saturation factor [0.6, 1.6], brightness shift
/// [-0.05, 0.05], contrast factor [0.7, 1.3], rotation in [-pi/4, pi/4],
/// crop removing 1-20% of the area followed by a resize to the original
/// extent. Color operations reduce to brightness/contrast on grayscale.
struct AugmentParams {
  bool hflip = false;
  float hue_shift = 0.0f;
  float saturation = 1.0f;
  float brightness = 0.0f;
  float contrast = 1.0f;
  float rotation = 0.0f;   ///< radians
  float crop_frac = 0.0f;  ///< area fraction removed; 0 disables the crop
  float crop_cx = 0.5f;    ///< window position in [0,1]
  float crop_cy = 0.5f;

  static AugmentParams identity() { return AugmentParams{}; }
};

AugmentParams sample_augment_params(RngStream& rng);

/// Applies the pipeline to one [C,H,W] image in [0,1]. Rotation and crop
/// resample bilinearly; exposed regions fill with background value 1.
/// Output is clamped to [0,1] and keeps the input shape.
Tensor apply_augment(const Tensor& image, const AugmentParams& params);

inline Tensor augment(const Tensor& image, RngStream& rng) {
  return apply_augment(image, sample_augment_params(rng));
}

}  // namespace dmeta

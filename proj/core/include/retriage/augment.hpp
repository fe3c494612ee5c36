#pragma once

#include <atomic>
#include <cstdint>

#include "retriage/image.hpp"
#include "retriage/rng.hpp"

namespace retriage::augment {

/// Bounds for the seeded training-time augmentations. Draw order inside
/// augment() is fixed: flip, dx, dy, scale, angle, brightness, contrast.
struct AugmentPolicy {
    double p_flip = 0.5;
    double max_shift = 0.0625;       // fraction of the image side
    double max_scale_delta = 0.1;    // scale drawn from [1-d, 1+d]
    double max_rotate = 15.0;        // degrees
    double max_brightness = 0.2;     // additive, fraction of 255
    double max_contrast = 0.2;       // multiplicative, gain from [1-d, 1+d]
    std::uint64_t seed = 0;

    void validate() const;  // throws ValidationError

    /// Policy that leaves every image untouched.
    static AugmentPolicy identity();
};

/// Mirror columns: j -> width-1-j.
RawImage hflip(const RawImage& img);

/// Inverse-mapped affine transform about the image center with bilinear
/// sampling; out-of-bounds source reads as 0. dx/dy in pixels, scale > 0,
/// angle in degrees.
RawImage shift_scale_rotate(const RawImage& img, double dx, double dy, double scale,
                            double angle_deg);

/// clip(alpha_mul * I + beta_add * 255, 0, 255).
RawImage brightness_contrast(const RawImage& img, double beta_add, double alpha_mul);

/// Flip with probability p_flip, then geometric, then photometric jitter,
/// all drawn uniformly within the policy bounds from `rng`.
RawImage augment(const RawImage& img, const AugmentPolicy& policy, Rng& rng);

/// Count of augment() invocations on this process; lets tests assert that
/// validation/inference paths never touch this module.
std::size_t invocation_count();

}  // namespace retriage::augment

#include "retriage/augment.hpp"

#include <algorithm>
#include <cmath>

#include "retriage/error.hpp"

namespace retriage::augment {

namespace {
std::atomic<std::size_t> g_invocations{0};
}

void AugmentPolicy::validate() const {
    if (p_flip < 0.0 || p_flip > 1.0)
        throw ValidationError("augment: p_flip must be in [0,1]");
    if (max_shift < 0 || max_scale_delta < 0 || max_rotate < 0 || max_brightness < 0 ||
        max_contrast < 0)
        throw ValidationError("augment: policy bounds must be >= 0");
    if (max_scale_delta >= 1.0 || max_contrast >= 1.0)
        throw ValidationError("augment: multiplicative deltas must be < 1");
}

AugmentPolicy AugmentPolicy::identity() {
    AugmentPolicy p;
    p.p_flip = 0.0;
    p.max_shift = 0.0;
    p.max_scale_delta = 0.0;
    p.max_rotate = 0.0;
    p.max_brightness = 0.0;
    p.max_contrast = 0.0;
    return p;
}

RawImage hflip(const RawImage& img) {
    RawImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

RawImage shift_scale_rotate(const RawImage& img, double dx, double dy, double scale,
                            double angle_deg) {
    if (scale <= 0.0) throw ValidationError("shift_scale_rotate: scale must be > 0");
    const double theta = angle_deg * 3.14159265358979323846 / 180.0;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;

    RawImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            // Invert: undo shift, then rotation and scale about the center.
            const double rx = x - cx - dx;
            const double ry = y - cy - dy;
            const double sx = (cos_t * rx + sin_t * ry) / scale + cx;
            const double sy = (-sin_t * rx + cos_t * ry) / scale + cy;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            for (int c = 0; c < 3; ++c) {
                auto sample = [&](int yy, int xx) -> double {
                    return img.in_bounds(yy, xx) ? img.at(yy, xx, c) : 0.0;
                };
                const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                                 fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    return out;
}

RawImage brightness_contrast(const RawImage& img, double beta_add, double alpha_mul) {
    if (alpha_mul <= 0.0) throw ValidationError("brightness_contrast: alpha_mul must be > 0");
    RawImage out(img.width, img.height);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const double v = alpha_mul * img.data[i] + beta_add * 255.0;
        out.data[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
    return out;
}

RawImage augment(const RawImage& img, const AugmentPolicy& policy, Rng& rng) {
    policy.validate();
    g_invocations.fetch_add(1, std::memory_order_relaxed);

    const bool flip = rng.next_double() < policy.p_flip;
    const double side = static_cast<double>(std::min(img.width, img.height));
    const double dx = rng.uniform(-policy.max_shift, policy.max_shift) * side;
    const double dy = rng.uniform(-policy.max_shift, policy.max_shift) * side;
    const double scale = rng.uniform(1.0 - policy.max_scale_delta, 1.0 + policy.max_scale_delta);
    const double angle = rng.uniform(-policy.max_rotate, policy.max_rotate);
    const double beta = rng.uniform(-policy.max_brightness, policy.max_brightness);
    const double alpha = rng.uniform(1.0 - policy.max_contrast, 1.0 + policy.max_contrast);

    RawImage out = flip ? hflip(img) : img;
    if (dx != 0.0 || dy != 0.0 || scale != 1.0 || angle != 0.0)
        out = shift_scale_rotate(out, dx, dy, scale, angle);
    if (beta != 0.0 || alpha != 1.0) out = brightness_contrast(out, beta, alpha);
    return out;
}

std::size_t invocation_count() { return g_invocations.load(std::memory_order_relaxed); }

}  // namespace retriage::augment

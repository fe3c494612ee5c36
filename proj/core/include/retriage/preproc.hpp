#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "retriage/autodiff.hpp"
#include "retriage/image.hpp"

namespace retriage::preproc {

/// Circle in pixel coordinates (x right, y down), sub-pixel center.
struct Circle {
    double cx = 0.0;
    double cy = 0.0;
    double r = 0.0;
};

struct Point {
    int x = 0;
    int y = 0;
};

struct PreprocConfig {
    int mask_threshold = 10;       // 0..255 grayscale level
    double margin_frac = 0.075;    // crop margin around the retina circle
    double sigma_ratio = 30.0;     // blur sigma = side / sigma_ratio
    double bg_alpha = 4.0;         // contrast gain on the background residual
    double bg_bias = 128.0;        // additive re-centering level
    int clahe_grid = 8;            // tiles per side
    double clahe_clip = 2.0;       // clip limit multiplier
    bool clahe_enabled = true;
    int target_side = 64;          // network input resolution
    std::array<double, 3> channel_mean{0.485, 0.456, 0.406};
    std::array<double, 3> channel_std{0.229, 0.224, 0.225};
    /// When set, margin_frac outside [0.05, 0.10] is rejected.
    bool strict_margin_bounds = false;

    void validate() const;  // throws ValidationError
};

/// Binary retina mask: 1 where ITU-R 601 luma exceeds `threshold`.
std::vector<std::uint8_t> retina_mask(const RawImage& img, int threshold);

/// Largest 4-connected component of a nonempty mask; ties broken by the
/// smallest (min-row, then min-col) seed pixel. Throws GeometryError on an
/// empty mask ("no retina found").
std::vector<Point> largest_component(const std::vector<std::uint8_t>& mask, int width, int height);

/// Smallest circle containing all points (Welzl over the convex hull;
/// containment within r + 1e-7). Throws GeometryError on an empty set.
Circle min_enclosing_circle(const std::vector<Point>& points);

/// Square crop of side 2*r*(1+margin_frac) rounded to the nearest even
/// integer, retina circle centered, zero fill outside the source frame and
/// outside the expanded circle. Throws GeometryError when r == 0.
RawImage circular_crop(const RawImage& img, const Circle& circle, double margin_frac);

/// Separable Gaussian blur, kernel radius ceil(3*sigma), symmetric
/// reflection at borders (edge pixel repeated), per channel.
ImageF gaussian_blur(const ImageF& img, double sigma);

/// Background-subtraction normalization:
/// clip(bg_alpha * (I - blur(I, side/sigma_ratio)) + bg_bias, 0, 255).
RawImage ben_graham(const RawImage& img, const PreprocConfig& cfg);

/// Contrast-limited adaptive histogram equalization of the green channel;
/// red/blue pass through untouched. Images smaller than the grid fall back
/// to a single global tile.
RawImage clahe_green(const RawImage& img, int grid, double clip);

/// Per-tile CLAHE transfer functions (256-entry lookup per tile, row-major
/// tiles). Exposed for diagnostics; clahe_green interpolates these.
std::vector<std::array<std::uint8_t, 256>> clahe_mappings(const RawImage& img, int grid,
                                                          double clip);

/// Bilinear resize with half-pixel-centered source coordinates.
RawImage resize_bilinear(const RawImage& img, int side);

/// (pixel/255 - mean[c]) / std[c], channel-major [3, side, side].
autodiff::Tensor to_tensor_normalized(const RawImage& img, const std::array<double, 3>& mean,
                                      const std::array<double, 3>& std);

/// Everything up to (and excluding) tensor normalization: localization,
/// crop, background subtraction, optional CLAHE, resize. This is the 8-bit
/// image the augmentation stage consumes.
RawImage preprocess_to_image(const RawImage& img, const PreprocConfig& cfg);

/// Full deterministic pipeline; errors carry the failing stage's name.
autodiff::Tensor preprocess(const RawImage& img, const PreprocConfig& cfg);

/// Per-stage snapshots for the --debug flag.
struct StageDump {
    std::vector<std::pair<std::string, RawImage>> stages;
};
StageDump preprocess_stages(const RawImage& img, const PreprocConfig& cfg);

}  // namespace retriage::preproc
